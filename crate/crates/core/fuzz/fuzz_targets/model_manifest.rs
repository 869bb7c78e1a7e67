#![no_main]

use genaug::nn::Model;
use libfuzzer_sys::fuzz_target;

// input: manifest JSON, a NUL byte, then the weight blob
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let (json, blob) = data.split_at(split);
    let blob = blob.get(1..).unwrap_or_default();
    if let Ok(model) = Model::from_manifest_bytes(json, blob) {
        let (manifest, bytes) = model.to_manifest("w.bin").unwrap();
        let text = serde_json::to_vec(&manifest).unwrap();
        assert_eq!(Model::from_manifest_bytes(&text, &bytes).unwrap(), model);
    }
});
