#![no_main]

use libfuzzer_sys::fuzz_target;
use scenelift::formats::{encode_pfm, parse_pfm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = parse_pfm(data) {
        let bytes = encode_pfm(&img).expect("parsed image encodes");
        let again = parse_pfm(&bytes).expect("re-encoded image parses");
        let bits = |i: &scenelift::ImageBuffer| i.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&again), bits(&img));
    }
});
