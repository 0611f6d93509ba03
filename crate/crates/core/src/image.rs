//! Row-major float image buffers used for images, masks, depth and normal maps.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    validity: Option<Vec<bool>>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
            validity: None,
        }
    }

    pub fn from_rgb(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height, 3);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "image channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "image data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            validity: None,
        })
    }

    pub fn with_validity(mut self, validity: Vec<bool>) -> Result<Self> {
        if validity.len() != self.width * self.height {
            return Err(Error::InvalidArgument(
                "validity mask length does not match image size".into(),
            ));
        }
        self.validity = Some(validity);
        Ok(self)
    }

    pub fn set_validity(&mut self, validity: Option<Vec<bool>>) {
        if let Some(v) = &validity {
            assert_eq!(v.len(), self.width * self.height);
        }
        self.validity = validity;
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn validity(&self) -> Option<&[bool]> {
        self.validity.as_deref()
    }

    /// A pixel is valid when there is no validity mask or the mask allows it.
    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.validity
            .as_ref()
            .map_or(true, |v| v[y * self.width + x])
    }

    #[inline]
    pub fn is_valid_index(&self, idx: usize) -> bool {
        self.validity.as_ref().map_or(true, |v| v[idx])
    }

    pub fn valid_count(&self) -> usize {
        self.validity
            .as_ref()
            .map_or(self.len_pixels(), |v| v.iter().filter(|&&b| b).count())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn rgb(&self, idx: usize) -> [f64; 3] {
        debug_assert_eq!(self.channels, 3);
        let i = idx * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_rgb(&mut self, idx: usize, rgb: [f64; 3]) {
        let i = idx * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn same_size(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_size(&self, other: &ImageBuffer, what: &str) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{what}: size mismatch {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Binary view of a single-channel mask (value >= 0.5).
    pub fn mask_bits(&self) -> Vec<bool> {
        debug_assert_eq!(self.channels, 1);
        self.data.iter().map(|&v| v >= 0.5).collect()
    }

    pub fn from_mask_bits(width: usize, height: usize, bits: &[bool]) -> Self {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self::from_vec(width, height, 1, data).expect("mask size")
    }

    pub fn count_on(&self) -> usize {
        self.data.iter().filter(|&&v| v >= 0.5).count()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }
}
