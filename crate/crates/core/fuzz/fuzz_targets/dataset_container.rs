#![no_main]

use genaug::zoo::{decode_dataset, encode_dataset};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = decode_dataset(data) {
        let again = decode_dataset(&encode_dataset(&ds).unwrap()).unwrap();
        assert_eq!(again, ds);
    }
});
