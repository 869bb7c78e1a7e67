#![no_main]

use genaug::metric::PenaltyConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = PenaltyConfig::from_json_slice(data) {
        let text = cfg.to_json_string().unwrap();
        assert_eq!(PenaltyConfig::from_json_slice(text.as_bytes()).unwrap(), cfg);
    }
});
