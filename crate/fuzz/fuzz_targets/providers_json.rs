#![no_main]

use libfuzzer_sys::fuzz_target;
use scenelift::providers::parse_providers_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_providers_config(text) {
            assert!(cfg.providers.values().all(|s| s.timeout > 0.0));
        }
    }
});
