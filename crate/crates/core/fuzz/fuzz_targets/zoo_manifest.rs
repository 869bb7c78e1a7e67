#![no_main]

use genaug::zoo::ZooManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = ZooManifest::from_json_slice(data) {
        let text = m.to_json_string().unwrap();
        assert_eq!(ZooManifest::from_json_slice(text.as_bytes()).unwrap(), m);
    }
});
