//! Per-object crops, single-view reconstruction and coarse placement.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::providers::ProviderSet;
use crate::scene::{AffineParams, PinholeCamera, TriangleMesh, Vec3};

/// Padding color of object crops, 127/255 per channel.
pub const CROP_GREY: f64 = 127.0 / 255.0;
/// Margin added on each side of the mask bounding box, as a fraction of its
/// longer side.
pub const CROP_MARGIN: f64 = 0.1;

const PLACE_ITERATIONS: usize = 50;
const PLACE_TOLERANCE: f64 = 1e-12;

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PixelBox {
    pub fn diagonal(&self) -> f64 {
        ((self.w * self.w + self.h * self.h) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    /// Square RGB crop with grey outside the mask.
    pub image: ImageBuffer,
    /// Part of the source image the crop shows.
    pub crop_box: PixelBox,
    /// Position of `crop_box`'s top-left corner inside `image`.
    pub offset: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub id: usize,
    pub mask: ImageBuffer,
    pub crop_box: PixelBox,
    /// Normalized mesh: vertex centroid at the origin, unit bbox diagonal.
    pub mesh: TriangleMesh,
    pub affine: AffineParams,
}

/// Bounding box of the on-pixels of a mask.
pub fn mask_bbox(mask: &ImageBuffer) -> Option<PixelBox> {
    let w = mask.width();
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for (i, on) in mask.mask_bits().into_iter().enumerate() {
        if on {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    (x0 != usize::MAX).then(|| PixelBox {
        x: x0,
        y: y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    })
}

/// Square grey-padded crop around the mask: side `ceil(1.2 * longer bbox
/// side)`, centered on the bounding box.
pub fn crop_and_center(image: &ImageBuffer, mask: &ImageBuffer) -> Result<Crop> {
    image.ensure_same_size(mask, "mask")?;
    if image.channels() != 3 {
        return Err(Error::InvalidArgument("crop_and_center needs an RGB image".into()));
    }
    let bbox = mask_bbox(mask).ok_or_else(|| Error::InvalidArgument("mask is empty".into()))?;
    let longer = bbox.w.max(bbox.h);
    // Integer form of ceil(longer * (1 + 2 * margin)) for the 10% margin.
    let side = (longer * 12).div_ceil(10);
    let left = bbox.x as i64 + (bbox.w as i64 - side as i64).div_euclid(2);
    let top = bbox.y as i64 + (bbox.h as i64 - side as i64).div_euclid(2);
    let (iw, ih) = (image.width() as i64, image.height() as i64);
    let (cx0, cy0) = (left.max(0), top.max(0));
    let (cx1, cy1) = ((left + side as i64).min(iw), (top + side as i64).min(ih));
    let mut out = ImageBuffer::filled(side, side, 3, CROP_GREY);
    let bits = mask.mask_bits();
    for y in cy0..cy1 {
        for x in cx0..cx1 {
            let idx = (y * iw + x) as usize;
            if bits[idx] {
                let o = ((y - top) as usize) * side + (x - left) as usize;
                out.set_rgb(o, image.rgb(idx));
            }
        }
    }
    Ok(Crop {
        image: out,
        crop_box: PixelBox {
            x: cx0 as usize,
            y: cy0 as usize,
            w: (cx1 - cx0) as usize,
            h: (cy1 - cy0) as usize,
        },
        offset: ((cx0 - left) as usize, (cy0 - top) as usize),
    })
}

/// Translates the mesh so its vertex centroid is the origin and scales it to
/// a unit bounding-box diagonal.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<TriangleMesh> {
    mesh.validate()?;
    if mesh.is_empty() {
        return Err(Error::ReconstructionFailure("provider returned a mesh without faces".into()));
    }
    let diag = mesh.bounds().map_or(0.0, |b| b.diagonal());
    if !(diag > 0.0) || !diag.is_finite() {
        return Err(Error::ReconstructionFailure("provider mesh has no spatial extent".into()));
    }
    let c = mesh.centroid();
    Ok(TriangleMesh {
        vertices: mesh.vertices.iter().map(|v| (v - c) / diag).collect(),
        colors: mesh.colors.clone(),
        faces: mesh.faces.clone(),
    })
}

/// Diagonal in pixels of the projected vertex bounding box, or `None` when a
/// vertex is at or behind the camera.
pub fn projected_diagonal(mesh: &TriangleMesh, affine: &AffineParams, camera: &PinholeCamera) -> Option<f64> {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in &mesh.vertices {
        let (u, w, _) = camera.project(&affine.transform_point(v)).ok()?;
        x0 = x0.min(u);
        x1 = x1.max(u);
        y0 = y0.min(w);
        y1 = y1.max(w);
    }
    Some(((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt())
}

/// Identity rotation, translation at the unprojected mask centroid and
/// median mask depth, and a uniform scale whose projected bounding-box
/// diagonal equals the mask's.
///
/// The scale starts from the weak-perspective ratio and is corrected by
/// fixed-point iteration on the actual projected diagonal.
pub fn coarse_place(
    mesh: &TriangleMesh,
    mask: &ImageBuffer,
    metric_depth: &ImageBuffer,
    camera: &PinholeCamera,
) -> Result<AffineParams> {
    mask.ensure_same_size(metric_depth, "metric depth")?;
    if mesh.vertices.is_empty() {
        return Err(Error::InvalidArgument("cannot place an empty mesh".into()));
    }
    let bbox = mask_bbox(mask).ok_or_else(|| Error::InvalidArgument("mask is empty".into()))?;
    let w = mask.width();
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
    let mut depths = Vec::new();
    for (i, on) in mask.mask_bits().into_iter().enumerate() {
        if !on {
            continue;
        }
        su += (i % w) as f64 + 0.5;
        sv += (i / w) as f64 + 0.5;
        n += 1.0;
        let d = metric_depth.data()[i];
        if metric_depth.is_valid_index(i) && d.is_finite() && d > 0.0 {
            depths.push(d);
        }
    }
    if depths.is_empty() {
        return Err(Error::PlacementFailure("no valid depth under the mask".into()));
    }
    depths.sort_by(f64::total_cmp);
    let m = depths.len();
    let z = if m % 2 == 1 { depths[m / 2] } else { 0.5 * (depths[m / 2 - 1] + depths[m / 2]) };
    let translation = camera.unproject(su / n, sv / n, z)?;

    let target = bbox.diagonal();
    let cam_pts: Vec<Vec3> = mesh.vertices.iter().map(|v| camera.rotation * v).collect();
    let extent = |k: usize| {
        let lo = cam_pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = cam_pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let diag_xy = extent(0).hypot(extent(1));
    if !(diag_xy > 0.0) {
        return Err(Error::PlacementFailure("mesh has no extent across the view".into()));
    }
    let mut affine = AffineParams {
        translation,
        ..AffineParams::identity()
    };
    let mut scale = target * z / (camera.focal * diag_xy);
    for _ in 0..PLACE_ITERATIONS {
        affine.log_scale = Vec3::repeat(scale.ln());
        let Some(actual) = projected_diagonal(mesh, &affine, camera) else {
            log::warn!("placed mesh crosses the camera plane; keeping scale {scale}");
            break;
        };
        let next = scale * target / actual;
        let done = ((next - scale) / scale).abs() < PLACE_TOLERANCE;
        scale = next;
        if done {
            break;
        }
    }
    affine.log_scale = Vec3::repeat(scale.ln());
    if projected_diagonal(mesh, &affine, camera).is_none() {
        return Err(Error::PlacementFailure(format!(
            "object at depth {z} does not fit in front of the camera"
        )));
    }
    affine.validate()?;
    Ok(affine)
}

/// Crop, reconstruct, normalize and place one object.
pub fn lift_object(
    id: usize,
    image: &ImageBuffer,
    mask: &ImageBuffer,
    camera: &PinholeCamera,
    metric_depth: &ImageBuffer,
    providers: &mut dyn ProviderSet,
) -> Result<ObjectRecord> {
    let crop = crop_and_center(image, mask)?;
    let raw = providers.object_recon(&crop.image)?;
    let mesh = normalize_mesh(&raw)?;
    let affine = coarse_place(&mesh, mask, metric_depth, camera)?;
    log::info!(
        "object {id}: {} faces at ({:.3}, {:.3}, {:.3}), scale {:.4}",
        mesh.faces.len(),
        affine.translation.x,
        affine.translation.y,
        affine.translation.z,
        affine.log_scale.x.exp()
    );
    Ok(ObjectRecord {
        id,
        mask: mask.clone(),
        crop_box: crop.crop_box,
        mesh,
        affine,
    })
}
