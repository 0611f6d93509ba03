use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenelift::depth::{
    align_depth_pair, normals_from_depth, recover_scale_shift, DepthAffine, ScaleShiftConfig,
};
use scenelift::{default_camera, Error, ImageBuffer, PinholeCamera, Vec3};

/// Metric depth of two planes meeting at a vertical crease.
fn crease_depth(cam: &PinholeCamera, tilt: f64) -> ImageBuffer {
    let (w, h) = (cam.width, cam.height);
    let left = Vec3::new(-tilt, 0.2, 1.0);
    let right = Vec3::new(tilt, 0.1, 1.0);
    let data = (0..w * h)
        .map(|i| {
            let ray = cam.unproject_camera((i % w) as f64 + 0.5, (i / w) as f64 + 0.5, 1.0);
            let a = 2.0 / left.dot(&ray);
            let b = 2.0 / right.dot(&ray);
            a.min(b)
        })
        .collect();
    ImageBuffer::from_vec(w, h, 1, data).unwrap()
}

fn normalize(metric: &ImageBuffer, s0: f64, t0: f64) -> ImageBuffer {
    metric.map(|d| (d - t0) / s0)
}

#[test]
fn recovers_shift_to_scale_ratio_of_a_tilted_scene() {
    let cam = default_camera(48, 48).unwrap();
    let metric = crease_depth(&cam, 0.8);
    let target = normals_from_depth(&metric, &cam, 5).unwrap();
    let (s0, t0) = (2.5, 0.3);
    let fit = recover_scale_shift(&normalize(&metric, s0, t0), &target, &cam, &ScaleShiftConfig::default()).unwrap();
    assert!((fit.ratio - t0 / s0).abs() < 1e-3, "ratio {}", fit.ratio);
    // The recovered metric depth equals the truth up to one global factor.
    let rec = fit.affine.apply(&normalize(&metric, s0, t0));
    let k = metric.data()[0] / rec.data()[0];
    for (a, b) in metric.data().iter().zip(rec.data()) {
        assert!((a / b - k).abs() < 1e-3 * k);
    }
}

#[test]
fn metric_input_keeps_zero_shift() {
    let cam = default_camera(40, 40).unwrap();
    let metric = crease_depth(&cam, 0.6);
    let target = normals_from_depth(&metric, &cam, 5).unwrap();
    let fit = recover_scale_shift(&metric, &target, &cam, &ScaleShiftConfig::default()).unwrap();
    assert!(fit.ratio.abs() < 1e-3 * metric.data()[0]);
}

#[test]
fn frontoparallel_input_is_degenerate() {
    let cam = default_camera(32, 32).unwrap();
    let d = ImageBuffer::filled(32, 32, 1, 0.5);
    let target = normals_from_depth(&ImageBuffer::filled(32, 32, 1, 3.0), &cam, 5).unwrap();
    let err = recover_scale_shift(&d, &target, &cam, &ScaleShiftConfig::default()).unwrap_err();
    assert!(matches!(err, Error::DegenerateGeometry(_)));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    /// Recovering from (D - a) / b yields (s * b, t + s * a).
    #[test]
    fn affine_composition(a in -0.5f64..0.5, b in 0.3f64..3.0, tilt in 0.3f64..1.0) {
        let cam = default_camera(32, 32).unwrap();
        let metric = crease_depth(&cam, tilt);
        let target = normals_from_depth(&metric, &cam, 5).unwrap();
        let d = normalize(&metric, 2.0, 0.1);
        let cfg = ScaleShiftConfig::default();
        let base = recover_scale_shift(&d, &target, &cam, &cfg).unwrap().affine;
        let moved = recover_scale_shift(&d.map(|v| (v - a) / b), &target, &cam, &cfg).unwrap().affine;
        prop_assert!((moved.scale - base.scale * b).abs() <= 1e-3 * base.scale * b);
        prop_assert!((moved.shift - (base.shift + base.scale * a)).abs() <= 1e-3 * (1.0 + base.shift.abs()));
    }

    #[test]
    fn normals_are_unit_and_face_camera(tilt in -1.0f64..1.0, lift in 0.5f64..4.0) {
        let cam = default_camera(20, 16).unwrap();
        let d = crease_depth(&cam, tilt).map(|v| v * lift);
        let n = normals_from_depth(&d, &cam, 5).unwrap();
        for idx in 0..d.len_pixels() {
            if !n.is_valid_index(idx) {
                continue;
            }
            let v = Vec3::from(n.rgb(idx));
            let p = cam.unproject_camera((idx % 20) as f64 + 0.5, (idx / 20) as f64 + 0.5, d.data()[idx]);
            prop_assert!((v.norm() - 1.0).abs() < 1e-4);
            prop_assert!(v.dot(&p) < 0.0);
        }
    }

    #[test]
    fn align_is_globally_optimal(seed in any::<u64>(), s in -2.0f64..2.0, t in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = || rng.gen::<f64>();
        let reference = ImageBuffer::from_vec(12, 12, 1, (0..144).map(|_| 1.0 + next()).collect()).unwrap();
        let moving = ImageBuffer::from_vec(12, 12, 1, (0..144).map(|_| next()).collect()).unwrap();
        let all = ImageBuffer::filled(12, 12, 1, 1.0);
        let fit = align_depth_pair(&reference, &moving, &all).unwrap();
        let residual = |aff: DepthAffine| -> f64 {
            reference.data().iter().zip(moving.data()).map(|(r, m)| (aff.scale * m + aff.shift - r).powi(2)).sum()
        };
        let hand = DepthAffine { scale: s.abs().max(1e-6), shift: t };
        prop_assert!(residual(fit.affine) <= residual(hand) + 1e-9);
    }
}
