//! 8-bit PNG images and binary masks.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

use super::ply::quantize_channel;

const WHAT: &str = "png";

/// Largest accepted dimension, guarding decoders against hostile headers.
pub const MAX_DIMENSION: u32 = 1 << 14;

/// Rounds every value to the nearest 8-bit level, as a PNG round trip would.
pub fn quantize(img: &ImageBuffer) -> ImageBuffer {
    img.map(|v| quantize_channel(v) as f64 / 255.0)
}

pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize_channel(v)).collect();
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer size")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size")),
        c => return Err(Error::InvalidArgument(format!("png needs 1 or 3 channels, got {c}"))),
    };
    let mut out = Vec::new();
    dynamic
        .write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .map_err(|e| Error::format(WHAT, e.to_string()))?;
    Ok(out)
}

pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}

fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    let mut reader = image::ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png);
    let mut limits = image::Limits::default();
    limits.max_image_width = Some(MAX_DIMENSION);
    limits.max_image_height = Some(MAX_DIMENSION);
    limits.max_alloc = Some(512 << 20);
    reader.limits(limits);
    reader.decode().map_err(|e| Error::format(WHAT, e.to_string()))
}

/// Decodes any PNG into a 3-channel image in `[0, 1]`.
pub fn decode_png_rgb(bytes: &[u8]) -> Result<ImageBuffer> {
    let rgb = decode(bytes)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    ImageBuffer::from_vec(w as usize, h as usize, 3, data)
}

/// Decodes any PNG into a binary mask: on where luminance exceeds 127.
pub fn decode_png_mask(bytes: &[u8]) -> Result<ImageBuffer> {
    let gray = decode(bytes)?.to_luma8();
    let (w, h) = gray.dimensions();
    let data = gray
        .into_raw()
        .into_iter()
        .map(|v| if v > 127 { 1.0 } else { 0.0 })
        .collect();
    ImageBuffer::from_vec(w as usize, h as usize, 1, data)
}

pub fn read_png_rgb(path: &Path) -> Result<ImageBuffer> {
    decode_png_rgb(&std::fs::read(path)?)
}

pub fn read_png_mask(path: &Path) -> Result<ImageBuffer> {
    decode_png_mask(&std::fs::read(path)?)
}

/// Writes a mask as 0/255 grayscale.
pub fn write_png_mask(path: &Path, mask: &ImageBuffer) -> Result<()> {
    write_png(path, &mask.map(|v| if v > 0.5 { 1.0 } else { 0.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip_is_quantized() {
        let data: Vec<f64> = (0..2 * 3 * 3).map(|i| i as f64 / 17.0).collect();
        let img = ImageBuffer::from_vec(2, 3, 3, data).unwrap();
        let back = decode_png_rgb(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, quantize(&img));
        // Quantized images are fixed points.
        let again = decode_png_rgb(&encode_png(&back).unwrap()).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn mask_round_trip() {
        let mask = ImageBuffer::from_vec(3, 1, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let bytes = encode_png(&mask).unwrap();
        assert_eq!(decode_png_mask(&bytes).unwrap(), mask);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_png_rgb(b"\x89PNG\r\n\x1a\nnope").is_err());
    }
}
