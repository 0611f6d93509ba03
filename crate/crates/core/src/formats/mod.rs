//! On-disk formats: PLY meshes, PFM float maps and 8-bit PNG images.

mod pfm;
mod ply;
mod png;

pub use pfm::{encode_pfm, parse_pfm, read_pfm, write_pfm};
pub use ply::{encode_ply, parse_ply, quantize_channel, read_ply, write_ply, DEFAULT_COLOR};
pub use png::{
    decode_png_mask, decode_png_rgb, encode_png, quantize, read_png_mask, read_png_rgb, write_png, write_png_mask,
    MAX_DIMENSION,
};
