//! Metric depth from affine-invariant depth, and depth maps to oriented
//! points.
//!
//! Normals of `s * D + t` depend only on the ratio `t / s`: the map
//! `D -> s * (D + t / s)` scales the backprojected cloud uniformly about the
//! camera center, which leaves every normal unchanged. Normal matching
//! therefore determines `t / s`; the overall scale is fixed by the
//! `reference_depth` convention of [`ScaleShiftConfig`].

use nalgebra as na;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::scene::{PinholeCamera, Vec3};

pub const DEFAULT_NORMAL_WINDOW: usize = 5;

/// Metric depth `scale * D + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthAffine {
    pub scale: f64,
    pub shift: f64,
}

impl DepthAffine {
    pub const IDENTITY: DepthAffine = DepthAffine { scale: 1.0, shift: 0.0 };

    pub fn apply(&self, depth: &ImageBuffer) -> ImageBuffer {
        let mut out = depth.map(|d| self.scale * d + self.shift);
        if let Some(v) = depth.validity() {
            out.set_validity(Some(v.to_vec()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OrientedPointCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    pub pixel_origin: Vec<(usize, usize)>,
}

impl OrientedPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Summed-area tables of the first and second moments of valid points.
struct Moments {
    w: usize,
    /// count, x, y, z, xx, xy, xz, yy, yz, zz per integral cell.
    table: Vec<[f64; 10]>,
}

impl Moments {
    fn new(points: &[Option<Vec3>], w: usize, h: usize) -> Self {
        let mut table = vec![[0.0; 10]; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = [0.0; 10];
            for x in 0..w {
                if let Some(p) = points[y * w + x] {
                    let m = [1.0, p.x, p.y, p.z, p.x * p.x, p.x * p.y, p.x * p.z, p.y * p.y, p.y * p.z, p.z * p.z];
                    for k in 0..10 {
                        row[k] += m[k];
                    }
                }
                let above = table[y * (w + 1) + x + 1];
                let cell = &mut table[(y + 1) * (w + 1) + x + 1];
                for k in 0..10 {
                    cell[k] = above[k] + row[k];
                }
            }
        }
        Self { w, table }
    }

    /// Sums over the inclusive pixel rectangle.
    fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> [f64; 10] {
        let s = self.w + 1;
        let (a, b, c, d) = (
            self.table[(y1 + 1) * s + x1 + 1],
            self.table[y0 * s + x1 + 1],
            self.table[(y1 + 1) * s + x0],
            self.table[y0 * s + x0],
        );
        std::array::from_fn(|k| a[k] - b[k] - c[k] + d[k])
    }
}

/// Least-squares plane normals of the camera-frame backprojection, oriented
/// toward the camera. Windows are clipped at the image border; pixels with
/// fewer than 3 valid neighbors, or collinear neighbors, are invalid.
pub fn normals_from_depth(depth: &ImageBuffer, camera: &PinholeCamera, window: usize) -> Result<ImageBuffer> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("normal window must be odd and >= 3, got {window}")));
    }
    if depth.channels() != 1 {
        return Err(Error::InvalidArgument("depth must have one channel".into()));
    }
    let (w, h) = (depth.width(), depth.height());
    let points: Vec<Option<Vec3>> = (0..w * h)
        .map(|idx| {
            let d = depth.data()[idx];
            (depth.is_valid_index(idx) && d > 0.0 && d.is_finite()).then(|| {
                camera.unproject_camera((idx % w) as f64 + 0.5, (idx / w) as f64 + 0.5, d)
            })
        })
        .collect();
    let moments = Moments::new(&points, w, h);
    let r = window / 2;
    let mut out = ImageBuffer::new(w, h, 3);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let Some(p) = points[idx] else { continue };
            let s = moments.sum(x.saturating_sub(r), y.saturating_sub(r), (x + r).min(w - 1), (y + r).min(h - 1));
            if let Some(n) = fit_normal(&s, &p) {
                out.set_rgb(idx, [n.x, n.y, n.z]);
                valid[idx] = true;
            }
        }
    }
    out.set_validity(Some(valid));
    Ok(out)
}

fn fit_normal(s: &[f64; 10], view: &Vec3) -> Option<Vec3> {
    let n = s[0];
    if n < 3.0 {
        return None;
    }
    let mean = Vec3::new(s[1], s[2], s[3]) / n;
    let cov = na::Matrix3::new(
        s[4] / n - mean.x * mean.x,
        s[5] / n - mean.x * mean.y,
        s[6] / n - mean.x * mean.z,
        s[5] / n - mean.x * mean.y,
        s[7] / n - mean.y * mean.y,
        s[8] / n - mean.y * mean.z,
        s[6] / n - mean.x * mean.z,
        s[8] / n - mean.y * mean.z,
        s[9] / n - mean.z * mean.z,
    );
    let eig = na::SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    // Collinear neighborhoods leave the plane undetermined.
    if !(l1 > 1e-9 * eig.eigenvalues[order[2]].abs().max(1e-300)) || l0 > l1 {
        return None;
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
    normal = normal.try_normalize(1e-12)?;
    if normal.dot(view) > 0.0 {
        normal = -normal;
    }
    Some(normal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleShiftConfig {
    pub window: usize,
    /// Median metric depth assigned to the recovered map.
    pub reference_depth: f64,
    /// Coarse grid over the relative depth spread.
    pub grid_samples: usize,
    pub max_refine_rounds: usize,
    pub tolerance: f64,
}

impl Default for ScaleShiftConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_NORMAL_WINDOW,
            reference_depth: 1.0,
            grid_samples: 41,
            max_refine_rounds: 100,
            tolerance: 1e-6,
        }
    }
}

/// Result of [`recover_scale_shift`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleShiftFit {
    pub affine: DepthAffine,
    /// The identifiable quantity, `shift / scale`.
    pub ratio: f64,
    /// Mean `1 - cos` between fitted and target normals.
    pub objective: f64,
}

/// Mean angular error `1 - cos` over pixels valid in both normal maps.
pub fn normal_discrepancy(normals: &ImageBuffer, target: &ImageBuffer) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for idx in 0..normals.len_pixels() {
        if !normals.is_valid_index(idx) || !target.is_valid_index(idx) {
            continue;
        }
        let a = Vec3::from(normals.rgb(idx));
        let b = Vec3::from(target.rgb(idx));
        let nb = b.norm();
        if !(nb > 0.0) {
            continue;
        }
        sum += 1.0 - a.dot(&b) / nb;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Finds the metric depth `s * D + t` whose normals best match
/// `target_normals` (camera frame). The ratio `t / s` comes from a
/// log-spaced grid over the relative depth spread followed by golden-section
/// refinement; `s` is then set so the median metric depth equals
/// `config.reference_depth`.
pub fn recover_scale_shift(
    depth: &ImageBuffer,
    target_normals: &ImageBuffer,
    camera: &PinholeCamera,
    config: &ScaleShiftConfig,
) -> Result<ScaleShiftFit> {
    depth.ensure_same_size(target_normals, "target normals")?;
    if target_normals.channels() != 3 {
        return Err(Error::InvalidArgument("target normals need 3 channels".into()));
    }
    if !(config.reference_depth > 0.0) {
        return Err(Error::InvalidArgument("reference depth must be positive".into()));
    }
    let n = depth.len_pixels();
    let usable: Vec<f64> = (0..n)
        .filter(|&i| depth.is_valid_index(i) && depth.data()[i].is_finite())
        .map(|i| depth.data()[i])
        .collect();
    let target_valid = (0..n).filter(|&i| target_normals.is_valid_index(i)).count();
    if usable.len() < 3 || target_valid * 10 < n {
        return Err(Error::InvalidArgument(
            "need valid depth and target normals on at least 10% of pixels".into(),
        ));
    }
    let lo = usable.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = usable.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    if !(spread > 0.0) {
        return Err(Error::DegenerateGeometry(
            "depth is constant, so normals do not depend on scale or shift".into(),
        ));
    }

    // Parametrize by q = log10(spread / nearest metric depth): r = spread / 10^q - lo.
    let ratio_of = |q: f64| spread / 10f64.powf(q) - lo;
    let objective = |q: f64| -> f64 {
        let r = ratio_of(q);
        let shifted = depth.map(|d| d + r);
        let mut shifted = shifted;
        if let Some(v) = depth.validity() {
            shifted.set_validity(Some(v.to_vec()));
        }
        normals_from_depth(&shifted, camera, config.window)
            .ok()
            .and_then(|nm| normal_discrepancy(&nm, target_normals))
            .unwrap_or(f64::INFINITY)
    };

    let (q_lo, q_hi) = (-3.0, 3.0);
    let k = config.grid_samples.max(3);
    let grid: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let q = q_lo + (q_hi - q_lo) * i as f64 / (k - 1) as f64;
            (q, objective(q))
        })
        .collect();
    let finite: Vec<f64> = grid.iter().map(|g| g.1).filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::DegenerateGeometry("no valid normals for any candidate shift".into()));
    }
    let (gmin, gmax) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if gmax - gmin < config.tolerance {
        return Err(Error::DegenerateGeometry(
            "normal objective is flat in scale and shift (e.g. a single frontoparallel plane)".into(),
        ));
    }
    let best = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let step = (q_hi - q_lo) / (k - 1) as f64;
    let mut a = grid[best].0 - step;
    let mut b = grid[best].0 + step;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    let mut best_f = grid[best].1;
    for _ in 0..config.max_refine_rounds {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = objective(d);
        }
        let f = fc.min(fd);
        let improvement = best_f - f;
        best_f = best_f.min(f);
        if (b - a) < 1e-9 || (improvement >= 0.0 && improvement < config.tolerance * 1e-3 && (b - a) < 1e-6) {
            break;
        }
    }
    let (q, f) = if fc < fd { (c, fc) } else { (d, fd) };
    let (q, f) = if f <= grid[best].1 { (q, f) } else { (grid[best].0, grid[best].1) };
    let ratio = ratio_of(q);

    let mut metric: Vec<f64> = usable.iter().map(|d| d + ratio).collect();
    metric.sort_by(f64::total_cmp);
    let median = metric[metric.len() / 2];
    let scale = config.reference_depth / median;
    Ok(ScaleShiftFit {
        affine: DepthAffine {
            scale,
            shift: scale * ratio,
        },
        ratio,
        objective: f,
    })
}

/// World-frame points for every valid, non-excluded pixel, with colors from
/// `image` and normals from a plane fit. Pixels whose plane fit fails get a
/// normal facing the camera.
pub fn backproject(
    depth: &ImageBuffer,
    image: &ImageBuffer,
    camera: &PinholeCamera,
    exclude: Option<&ImageBuffer>,
) -> Result<OrientedPointCloud> {
    depth.ensure_same_size(image, "image")?;
    if let Some(m) = exclude {
        depth.ensure_same_size(m, "exclusion mask")?;
    }
    let normals = normals_from_depth(depth, camera, DEFAULT_NORMAL_WINDOW)?;
    let rt = camera.rotation.transpose();
    let w = depth.width();
    let mut cloud = OrientedPointCloud::default();
    for idx in 0..depth.len_pixels() {
        let d = depth.data()[idx];
        if !depth.is_valid_index(idx) || !(d > 0.0) || !d.is_finite() {
            continue;
        }
        if exclude.is_some_and(|m| m.data()[idx] > 0.5) {
            continue;
        }
        let (x, y) = (idx % w, idx / w);
        let pc = camera.unproject_camera(x as f64 + 0.5, y as f64 + 0.5, d);
        let n_cam = if normals.is_valid_index(idx) {
            Vec3::from(normals.rgb(idx))
        } else {
            -pc.normalize()
        };
        cloud.points.push(camera.camera_to_world(&pc));
        cloud.normals.push(rt * n_cam);
        let c = if image.channels() == 3 { image.rgb(idx) } else { [image.data()[idx]; 3] };
        cloud.colors.push(c);
        cloud.pixel_origin.push((x, y));
    }
    Ok(cloud)
}

/// Result of [`align_depth_pair`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairAlignment {
    pub affine: DepthAffine,
    /// Set when the unconstrained slope was not positive and got clamped.
    pub clamped: bool,
}

pub const MIN_ALIGN_OVERLAP: usize = 100;
pub const MIN_ALIGN_SCALE: f64 = 1e-6;

/// Closed-form least squares `(s, t)` minimizing `sum (s * moving + t - reference)^2`
/// over the overlap.
pub fn align_depth_pair(reference: &ImageBuffer, moving: &ImageBuffer, overlap: &ImageBuffer) -> Result<PairAlignment> {
    reference.ensure_same_size(moving, "moving depth")?;
    reference.ensure_same_size(overlap, "overlap mask")?;
    let (mut n, mut sm, mut sr, mut smm, mut smr) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for idx in 0..reference.len_pixels() {
        if overlap.data()[idx] <= 0.5 || !reference.is_valid_index(idx) || !moving.is_valid_index(idx) {
            continue;
        }
        let (m, r) = (moving.data()[idx], reference.data()[idx]);
        if !m.is_finite() || !r.is_finite() {
            continue;
        }
        n += 1.0;
        sm += m;
        sr += r;
        smm += m * m;
        smr += m * r;
    }
    if (n as usize) < MIN_ALIGN_OVERLAP {
        return Err(Error::InvalidArgument(format!(
            "depth alignment needs {MIN_ALIGN_OVERLAP} overlapping valid pixels, found {n}"
        )));
    }
    let (mean_m, mean_r) = (sm / n, sr / n);
    let var = smm / n - mean_m * mean_m;
    let cov = smr / n - mean_m * mean_r;
    let scale = if var > 1e-15 * (1.0 + mean_m * mean_m) { cov / var } else { f64::NAN };
    if scale.is_finite() && scale > 0.0 {
        return Ok(PairAlignment {
            affine: DepthAffine {
                scale,
                shift: mean_r - scale * mean_m,
            },
            clamped: false,
        });
    }
    log::warn!("depth alignment slope is not positive; clamping to {MIN_ALIGN_SCALE}");
    Ok(PairAlignment {
        affine: DepthAffine {
            scale: MIN_ALIGN_SCALE,
            shift: mean_r - MIN_ALIGN_SCALE * mean_m,
        },
        clamped: true,
    })
}
