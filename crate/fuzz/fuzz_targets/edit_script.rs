#![no_main]

use libfuzzer_sys::fuzz_target;
use scenelift::edit::EditScript;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = EditScript::parse(text);
    }
});
