#![no_main]

use genaug::zoo::{encode_cifar10_batch, parse_cifar10_batch, Split};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = parse_cifar10_batch(data, Split::Train) {
        assert_eq!(encode_cifar10_batch(&ds).unwrap(), data);
    }
});
