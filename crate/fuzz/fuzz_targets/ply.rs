#![no_main]

use libfuzzer_sys::fuzz_target;
use scenelift::formats::{encode_ply, parse_ply};

fuzz_target!(|data: &[u8]| {
    if let Ok(mesh) = parse_ply(data) {
        // Anything accepted must survive our own writer.
        let again = parse_ply(&encode_ply(&mesh)).expect("re-encoded mesh parses");
        assert_eq!(again.faces, mesh.faces);
        assert_eq!(again.vertices.len(), mesh.vertices.len());
    }
});
