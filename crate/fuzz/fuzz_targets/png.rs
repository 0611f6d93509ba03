#![no_main]

use libfuzzer_sys::fuzz_target;
use scenelift::formats::{decode_png_mask, decode_png_rgb};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_png_rgb(data) {
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    if let Ok(mask) = decode_png_mask(data) {
        assert!(mask.data().iter().all(|v| *v == 0.0 || *v == 1.0));
    }
});
