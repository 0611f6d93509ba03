//! Image and geometry metrics: PSNR, SSIM, Chamfer distance and F-score.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::scene::{TriangleMesh, Vec3};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const F_SCORE_THRESHOLD: f64 = 0.1;
pub const SURFACE_SAMPLES: usize = 10_000;

fn check_pair(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::InvalidArgument(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    if a.data().is_empty() {
        return Err(Error::InvalidArgument("images are empty".into()));
    }
    Ok(())
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.data().len() as f64)
}

/// Peak signal-to-noise ratio for values in `[0, 1]`; `f64::INFINITY` when
/// the images are identical.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering of a single-channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all full `window` x `window` Gaussian
/// windows (sigma 1.5) and channels, for values in `[0, 1]`.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, window: usize, k1: f64, k2: f64) -> Result<f64> {
    check_pair(a, b)?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    if window == 0 || w < window || h < window {
        return Err(Error::InvalidArgument(format!(
            "ssim window {window} does not fit a {w}x{h} image"
        )));
    }
    let kernel = gaussian_kernel(window, SSIM_SIGMA);
    let (c1, c2) = ((k1 * 1.0).powi(2), (k2 * 1.0).powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        let pa: Vec<f64> = a.data().iter().skip(c).step_by(ch).copied().collect();
        let pb: Vec<f64> = b.data().iter().skip(c).step_by(ch).copied().collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, w, h, &kernel);
        let mu_b = filter_valid(&pb, w, h, &kernel);
        let e_aa = filter_valid(&prod(&pa, &pa), w, h, &kernel);
        let e_bb = filter_valid(&prod(&pb, &pb), w, h, &kernel);
        let e_ab = filter_valid(&prod(&pa, &pb), w, h, &kernel);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn ssim_default(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ssim(a, b, SSIM_WINDOW, SSIM_K1, SSIM_K2)
}

fn nonempty(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("point sets must be nonempty".into()));
    }
    Ok(())
}

/// Euclidean distance from every point of `from` to its nearest point in `to`.
pub fn nearest_distances(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    let pts: Vec<[f64; 3]> = to.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&pts);
    from.iter()
        .map(|p| tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]).distance.sqrt())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric mean nearest-neighbor Euclidean distance:
/// `(mean_a min_b |a-b| + mean_b min_a |a-b|) / 2`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    nonempty(a, b)?;
    Ok(0.5 * (mean(&nearest_distances(a, b)) + mean(&nearest_distances(b, a))))
}

/// F-score in percent: harmonic mean of the fraction of `a` closer than
/// `threshold` to `b` and the reverse.
pub fn f_score(a: &[Vec3], b: &[Vec3], threshold: f64) -> Result<f64> {
    nonempty(a, b)?;
    let frac = |d: Vec<f64>| d.iter().filter(|&&x| x < threshold).count() as f64 / d.len() as f64;
    let precision = frac(nearest_distances(a, b));
    let recall = frac(nearest_distances(b, a));
    Ok(if precision + recall == 0.0 { 0.0 } else { 200.0 * precision * recall / (precision + recall) })
}

/// `n` points drawn uniformly by area over the mesh surface.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("mesh has no surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let r = rng.gen::<f64>() * total;
            let f = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
            let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i as usize]);
            let (u, v): (f64, f64) = (rng.gen(), rng.gen());
            let su = u.sqrt();
            a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryScore {
    pub chamfer: f64,
    pub f_score: f64,
}

/// Chamfer distance and F-score between two placed meshes after scaling both
/// so the ground truth has a unit bounding-box diagonal. Both meshes are
/// sampled with the same seed, so identical meshes score exactly 0 and 100.
pub fn geometry_metrics(predicted: &TriangleMesh, truth: &TriangleMesh, samples: usize, seed: u64) -> Result<GeometryScore> {
    let bounds = truth
        .bounds()
        .ok_or_else(|| Error::InvalidArgument("ground-truth mesh is empty".into()))?;
    let diag = bounds.diagonal();
    if !(diag > 0.0) {
        return Err(Error::InvalidArgument("ground-truth mesh has no extent".into()));
    }
    let center = bounds.center();
    let norm = |pts: Vec<Vec3>| pts.into_iter().map(|p| (p - center) / diag).collect::<Vec<_>>();
    let p = norm(sample_surface(predicted, samples, seed)?);
    let t = norm(sample_surface(truth, samples, seed)?);
    Ok(GeometryScore {
        chamfer: chamfer(&p, &t)?,
        f_score: f_score(&p, &t, F_SCORE_THRESHOLD)?,
    })
}
