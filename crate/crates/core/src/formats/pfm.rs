//! Portable float maps. Written little-endian (negative scale), rows stored
//! bottom to top. Invalid pixels are stored as NaN and read back as invalid.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

const WHAT: &str = "pfm";

fn fail(message: impl Into<String>) -> Error {
    Error::format(WHAT, message)
}

pub fn encode_pfm(img: &ImageBuffer) -> Result<Vec<u8>> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let magic = match c {
        1 => "Pf",
        3 => "PF",
        _ => return Err(Error::InvalidArgument(format!("pfm needs 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * c * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            let valid = img.is_valid(x, y);
            for &v in img.pixel(x, y) {
                let v = if valid { v as f32 } else { f32::NAN };
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_pfm(path: &Path, img: &ImageBuffer) -> Result<()> {
    std::fs::write(path, encode_pfm(img)?)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<ImageBuffer> {
    parse_pfm(&std::fs::read(path)?)
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos || *pos - start > 32 {
        return Err(fail("malformed header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| fail("malformed header"))
}

pub fn parse_pfm(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut pos = 0;
    let channels = match token(bytes, &mut pos)? {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(fail(format!("bad magic {m:?}"))),
    };
    let w: usize = token(bytes, &mut pos)?.parse().map_err(|_| fail("bad width"))?;
    let h: usize = token(bytes, &mut pos)?.parse().map_err(|_| fail("bad height"))?;
    let scale: f64 = token(bytes, &mut pos)?.parse().map_err(|_| fail("bad scale"))?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(fail("scale must be finite and nonzero"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fail("missing raster"));
    }
    pos += 1;
    if w == 0 || h == 0 {
        return Err(fail("zero dimension"));
    }
    let n = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| fail("dimensions overflow"))?;
    let raster = &bytes[pos..];
    if raster.len() != n.checked_mul(4).ok_or_else(|| fail("dimensions overflow"))? {
        return Err(fail(format!("raster has {} bytes, expected {}", raster.len(), n * 4)));
    }
    let big = scale > 0.0;
    let mut data = vec![0.0; n];
    let mut validity = vec![true; w * h];
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if big { f32::from_be_bytes(b) } else { f32::from_le_bytes(b) };
        let file_pixel = i / channels;
        let (x, file_row) = (file_pixel % w, file_pixel / w);
        let y = h - 1 - file_row;
        let idx = y * w + x;
        data[idx * channels + i % channels] = v as f64;
        if !v.is_finite() {
            validity[idx] = false;
        }
    }
    let mut img = ImageBuffer::from_vec(w, h, channels, data)?;
    if validity.iter().any(|v| !v) {
        for (idx, ok) in validity.iter().enumerate() {
            if !ok {
                for c in 0..channels {
                    img.data_mut()[idx * channels + c] = 0.0;
                }
            }
        }
        img.set_validity(Some(validity));
    }
    Ok(img)
}
