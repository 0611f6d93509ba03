#![no_main]

use libfuzzer_sys::fuzz_target;
use scenelift::providers::protocol::{parse_request, parse_response, RequestManifest};
use scenelift::providers::ProviderKind;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for kind in ProviderKind::ALL {
        let request = RequestManifest::new(kind);
        if let Ok(resp) = parse_response(text, &request) {
            for path in resp.outputs.values() {
                assert!(!path.starts_with('/') && !path.split('/').any(|c| c == ".."), "{path}");
            }
        }
    }
    let _ = parse_request(text);
});
