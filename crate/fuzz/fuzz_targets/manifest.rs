#![no_main]

use libfuzzer_sys::fuzz_target;
use scenelift::bundle::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::parse(text) {
            // Paths in an accepted manifest never leave the bundle.
            for f in m.files() {
                assert!(!f.starts_with('/') && !f.split('/').any(|c| c == ".."), "{f}");
            }
        }
    }
});
