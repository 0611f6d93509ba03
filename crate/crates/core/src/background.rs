//! Background surface: inpaint the object holes, estimate and align the
//! background depth, then mesh it as a height field.

use serde::{Deserialize, Serialize};

use crate::depth::{align_depth_pair, DepthAffine, MIN_ALIGN_OVERLAP};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::providers::ProviderSet;
use crate::scene::{PinholeCamera, TriangleMesh, Vec3};

pub const DEFAULT_DILATE_KERNEL: usize = 30;
pub const DEFAULT_DISCONTINUITY: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    /// Side of the square structuring element applied to the mask union
    /// before inpainting.
    pub dilate_kernel: usize,
    /// Relative corner depth jump above which a face is dropped.
    pub discontinuity: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            dilate_kernel: DEFAULT_DILATE_KERNEL,
            discontinuity: DEFAULT_DISCONTINUITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Background {
    pub mesh: TriangleMesh,
    pub inpainted: ImageBuffer,
    /// Metric background depth after alignment.
    pub depth: ImageBuffer,
    pub dilated_mask: ImageBuffer,
    pub alignment: DepthAffine,
}

/// Binary dilation with a `kernel` x `kernel` square. The element covers
/// offsets `-kernel/2 ..= (kernel-1)/2` around each pixel, so odd kernels are
/// centered and even ones extend one pixel further up and left.
pub fn dilate_mask(mask: &ImageBuffer, kernel: usize) -> ImageBuffer {
    let (w, h) = (mask.width(), mask.height());
    let bits = mask.mask_bits();
    if kernel <= 1 || w == 0 || h == 0 {
        return ImageBuffer::from_mask_bits(w, h, &bits);
    }
    // An output pixel x is on when some on-pixel lies in [x - after, x + before].
    let before = kernel / 2;
    let after = (kernel - 1) / 2;
    let pass = |src: &[bool], len: usize, stride: usize, count: usize, outer: usize| -> Vec<bool> {
        let mut out = vec![false; src.len()];
        let mut prefix = vec![0usize; len + 1];
        for o in 0..count {
            let base = o * outer;
            for i in 0..len {
                prefix[i + 1] = prefix[i] + src[base + i * stride] as usize;
            }
            for i in 0..len {
                let lo = i.saturating_sub(after);
                let hi = (i + before).min(len - 1);
                out[base + i * stride] = prefix[hi + 1] > prefix[lo];
            }
        }
        out
    };
    let rows = pass(&bits, w, 1, h, w);
    let both = pass(&rows, h, w, w, 1);
    ImageBuffer::from_mask_bits(w, h, &both)
}

/// Pixelwise OR of binary masks, all of size `w` x `h`.
pub fn union_masks(masks: &[ImageBuffer], w: usize, h: usize) -> Result<ImageBuffer> {
    let mut bits = vec![false; w * h];
    for (i, m) in masks.iter().enumerate() {
        if m.width() != w || m.height() != h {
            return Err(Error::InvalidArgument(format!(
                "mask {i} is {}x{}, expected {w}x{h}",
                m.width(),
                m.height()
            )));
        }
        for (b, on) in bits.iter_mut().zip(m.mask_bits()) {
            *b |= on;
        }
    }
    Ok(ImageBuffer::from_mask_bits(w, h, &bits))
}

/// Largest pairwise relative depth difference, relative to the nearer depth.
fn relative_spread(d: &[f64]) -> f64 {
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / lo
}

/// Grid mesh over a depth map: one vertex per valid pixel (backprojected
/// through its center), two faces per fully valid 2x2 cell, faces whose
/// corners disagree by more than `discontinuity` relative depth dropped.
pub fn surface_from_depth(
    depth: &ImageBuffer,
    colors: &ImageBuffer,
    camera: &PinholeCamera,
    discontinuity: f64,
) -> Result<TriangleMesh> {
    depth.ensure_same_size(colors, "color image")?;
    if !(discontinuity >= 0.0) {
        return Err(Error::InvalidArgument("discontinuity threshold must be non-negative".into()));
    }
    let (w, h) = (depth.width(), depth.height());
    let usable = |idx: usize| {
        let d = depth.data()[idx];
        depth.is_valid_index(idx) && d.is_finite() && d > 0.0
    };
    let mut index = vec![u32::MAX; w * h];
    let mut mesh = TriangleMesh::default();
    for idx in 0..w * h {
        if !usable(idx) {
            continue;
        }
        let (x, y) = (idx % w, idx / w);
        let pc = camera.unproject_camera(x as f64 + 0.5, y as f64 + 0.5, depth.data()[idx]);
        index[idx] = mesh.vertices.len() as u32;
        mesh.vertices.push(camera.camera_to_world(&pc));
        mesh.colors
            .push(if colors.channels() == 3 { colors.rgb(idx) } else { [colors.data()[idx]; 3] });
    }
    let mut cells = 0;
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let c = [y * w + x, y * w + x + 1, (y + 1) * w + x + 1, (y + 1) * w + x];
            if c.iter().any(|&i| index[i] == u32::MAX) {
                continue;
            }
            cells += 1;
            for tri in [[c[0], c[1], c[2]], [c[0], c[2], c[3]]] {
                let d = tri.map(|i| depth.data()[i]);
                if relative_spread(&d) <= discontinuity {
                    mesh.faces.push(tri.map(|i| index[i]));
                }
            }
        }
    }
    if mesh.vertices.len() < 4 || cells == 0 {
        return Err(Error::DegenerateInput(format!(
            "depth has {} valid pixels and no fully valid 2x2 cell",
            mesh.vertices.len()
        )));
    }
    Ok(mesh)
}

/// Inpaints the objects away, estimates the background depth, aligns it to
/// the metric scene depth outside the dilated masks and meshes it.
pub fn build_background(
    image: &ImageBuffer,
    object_masks: &[ImageBuffer],
    camera: &PinholeCamera,
    fg_depth: &ImageBuffer,
    providers: &mut dyn ProviderSet,
    config: &BackgroundConfig,
) -> Result<Background> {
    let (w, h) = (image.width(), image.height());
    image.ensure_same_size(fg_depth, "scene depth")?;
    let union = union_masks(object_masks, w, h)?;
    let dilated = dilate_mask(&union, config.dilate_kernel);
    let outside = dilated.map(|v| if v > 0.5 { 0.0 } else { 1.0 });
    let free = outside.count_on();
    if free < MIN_ALIGN_OVERLAP {
        return Err(Error::DegenerateInput(format!(
            "object masks leave {free} background pixels after dilation; {MIN_ALIGN_OVERLAP} are needed"
        )));
    }

    let inpainted = providers.inpaint(image, &dilated)?;
    let estimate = providers.depth_normal(&inpainted)?;
    let pair = align_depth_pair(fg_depth, &estimate.depth, &outside)?;
    if pair.clamped {
        log::warn!("background depth alignment clamped its scale");
    }
    let mut depth = pair.affine.apply(&estimate.depth);
    let validity: Vec<bool> = (0..w * h)
        .map(|i| estimate.depth.is_valid_index(i) && depth.data()[i] > 0.0 && depth.data()[i].is_finite())
        .collect();
    let dropped = validity.iter().filter(|v| !**v).count();
    if dropped > 0 {
        log::warn!("{dropped} background pixels have non-positive aligned depth");
    }
    depth.set_validity(Some(validity));
    let mesh = surface_from_depth(&depth, &inpainted, camera, config.discontinuity)?;
    log::info!(
        "background: {} vertices, {} faces, depth scale {:.4} shift {:.4}",
        mesh.vertices.len(),
        mesh.faces.len(),
        pair.affine.scale,
        pair.affine.shift
    );
    Ok(Background {
        mesh,
        inpainted,
        depth,
        dilated_mask: dilated,
        alignment: pair.affine,
    })
}

/// Unit normal of face `f` from its winding.
pub fn face_normal(mesh: &TriangleMesh, f: usize) -> Vec3 {
    let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i as usize]);
    (b - a).cross(&(c - a)).normalize()
}
