use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenelift::raster::{
    coverage, rasterize_backward, rasterize_hard, rasterize_soft, RenderAdjoint, RenderOutput, SceneGradients,
    SoftRasterConfig,
};
use scenelift::{default_camera, AffineParams, PinholeCamera, Scene, SceneObject, TriangleMesh, Vec3};

/// World point at depth `z` seen at pixel `(u, v)` by a default camera.
fn at_pixel(cam: &PinholeCamera, u: f64, v: f64, z: f64) -> Vec3 {
    cam.unproject(u, v, z).unwrap()
}

fn triangle(verts: [Vec3; 3], colors: [[f64; 3]; 3]) -> TriangleMesh {
    TriangleMesh::new(verts.to_vec(), colors.to_vec(), vec![[0, 1, 2]]).unwrap()
}

fn object(mesh: TriangleMesh) -> SceneObject {
    SceneObject {
        affine: AffineParams::identity(),
        mesh,
    }
}

fn inside_oracle(p: [f64; 2], t: &[[f64; 2]; 3]) -> bool {
    let s = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let e = [s(t[0], t[1]), s(t[1], t[2]), s(t[2], t[0])];
    e.iter().all(|&v| v >= 0.0) || e.iter().all(|&v| v <= 0.0)
}

#[test]
fn empty_scene_renders_background() {
    let cam = default_camera(6, 5).unwrap();
    let scene = Scene::default();
    for out in [
        rasterize_hard(&scene, &cam, [0.2, 0.3, 0.4], 50.0),
        rasterize_soft(
            &scene,
            &cam,
            &SoftRasterConfig {
                background_color: [0.2, 0.3, 0.4],
                ..Default::default()
            },
        ),
    ] {
        assert!(out.object_masks.is_empty());
        assert_eq!(out.depth.valid_count(), 0);
        for idx in 0..30 {
            assert_eq!(out.color.rgb(idx), [0.2, 0.3, 0.4]);
        }
    }
}

#[test]
fn hard_coverage_matches_point_in_triangle_oracle() {
    let cam = default_camera(4, 4).unwrap();
    let screen = [[0.2, 0.3], [3.9, 1.1], [1.4, 3.7]];
    let mesh = triangle(screen.map(|[u, v]| at_pixel(&cam, u, v, 1.0)), [[1.0, 0.0, 0.0]; 3]);
    let scene = Scene {
        objects: vec![object(mesh)],
        background: TriangleMesh::default(),
    };
    let out = rasterize_hard(&scene, &cam, [0.0; 3], 100.0);
    for y in 0..4 {
        for x in 0..4 {
            let expect = inside_oracle([x as f64 + 0.5, y as f64 + 0.5], &screen);
            assert_eq!(out.object_masks[0].get(x, y, 0) == 1.0, expect, "pixel {x},{y}");
            assert_eq!(out.depth.is_valid(x, y), expect);
            if expect {
                assert!((out.depth.get(x, y, 0) - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn hard_z_buffer_keeps_nearer_object() {
    let cam = default_camera(8, 8).unwrap();
    let screen = [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]];
    let near = triangle(screen.map(|[u, v]| at_pixel(&cam, u, v, 1.0)), [[1.0, 0.0, 0.0]; 3]);
    let far = triangle(screen.map(|[u, v]| at_pixel(&cam, u, v, 2.0)), [[0.0, 1.0, 0.0]; 3]);
    // Far object first, so ordering comes from depth and not from list order.
    let scene = Scene {
        objects: vec![object(far), object(near)],
        background: TriangleMesh::default(),
    };
    let out = rasterize_hard(&scene, &cam, [0.0; 3], 100.0);
    let (x, y) = (2, 2);
    assert!((out.depth.get(x, y, 0) - 1.0).abs() < 1e-12);
    assert_eq!(out.object_masks[1].get(x, y, 0), 1.0);
    assert_eq!(out.object_masks[0].get(x, y, 0), 0.0);
    assert_eq!(out.color.pixel(x, y), &[1.0, 0.0, 0.0]);
}

#[test]
fn soft_tail_and_edge_midpoint() {
    let cam = default_camera(32, 32).unwrap();
    let config = SoftRasterConfig::default();
    // Vertical edge through the pixel-center column x = 10.5.
    let screen = [[10.5, 4.0], [10.5, 28.0], [26.0, 16.0]];
    let mesh = triangle(screen.map(|[u, v]| at_pixel(&cam, u, v, 2.0)), [[0.9, 0.1, 0.1]; 3]);
    let scene = Scene {
        objects: vec![object(mesh)],
        background: TriangleMesh::default(),
    };
    let out = rasterize_soft(&scene, &cam, &config);
    let on_edge = out.object_masks[0].get(10, 16, 0);
    assert!((on_edge - 0.5).abs() <= 1e-3, "edge coverage {on_edge}");
    // Pixel center at x = 4.5 lies 6 sigma left of the edge.
    let far = out.object_masks[0].get(4, 16, 0);
    assert!(far < 0.01);
    let c = out.color.pixel(4, 16);
    for ch in 0..3 {
        assert!((c[ch] - 0.5).abs() <= 0.01);
    }
}

/// Straight-line evaluation of the single-layer coverage model for one
/// triangle over the background color.
fn oracle_pixel(p: [f64; 2], t: &[[f64; 2]; 3], z: &[f64; 3], c: &[[f64; 3]; 3], sigma: f64, bg: [f64; 3]) -> (f64, [f64; 3], Option<f64>) {
    let inside = inside_oracle(p, t);
    let mut best = (f64::INFINITY, 0usize, 0.0);
    for e in 0..3 {
        let (a, b) = (t[e], t[(e + 1) % 3]);
        let ab = [b[0] - a[0], b[1] - a[1]];
        let ap = [p[0] - a[0], p[1] - a[1]];
        let s = ((ap[0] * ab[0] + ap[1] * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
        let q = [a[0] + s * ab[0], a[1] + s * ab[1]];
        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        if d < best.0 {
            best = (d, e, s);
        }
    }
    let (d, e, s) = best;
    let signed = if inside { d } else { -d };
    let alpha = coverage(signed / sigma).0;
    let (col, depth) = if inside {
        let area = (t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[1][1] - t[0][1]) * (t[2][0] - t[0][0]);
        let sub = |i: usize, j: usize| (t[i][0] - p[0]) * (t[j][1] - p[1]) - (t[i][1] - p[1]) * (t[j][0] - p[0]);
        let b = [sub(1, 2) / area, sub(2, 0) / area, sub(0, 1) / area];
        let col = [0, 1, 2].map(|ch| b[0] * c[0][ch] + b[1] * c[1][ch] + b[2] * c[2][ch]);
        (col, 1.0 / (b[0] / z[0] + b[1] / z[1] + b[2] / z[2]))
    } else {
        let (i, j) = (e, (e + 1) % 3);
        let col = [0, 1, 2].map(|ch| (1.0 - s) * c[i][ch] + s * c[j][ch]);
        (col, 1.0 / ((1.0 - s) / z[i] + s / z[j]))
    };
    let out = [0, 1, 2].map(|ch| alpha * col[ch] + (1.0 - alpha) * bg[ch]);
    (alpha, out, (alpha > 0.0).then_some(depth))
}

#[test]
fn soft_matches_formula_oracle_8x8() {
    let cam = default_camera(8, 8).unwrap();
    let config = SoftRasterConfig {
        sigma: 0.5,
        ..Default::default()
    };
    let screen = [[1.3, 0.9], [6.8, 2.4], [2.9, 6.6]];
    let z = [2.0, 2.5, 3.1];
    let c = [[1.0, 0.2, 0.0], [0.0, 0.8, 0.3], [0.2, 0.1, 0.9]];
    let verts = [0, 1, 2].map(|i| at_pixel(&cam, screen[i][0], screen[i][1], z[i]));
    let scene = Scene {
        objects: vec![object(triangle(verts, c))],
        background: TriangleMesh::default(),
    };
    let out = rasterize_soft(&scene, &cam, &config);
    // Re-derive the projected screen positions through the camera.
    let t = verts.map(|v| {
        let (u, v, _) = cam.project(&v).unwrap();
        [u, v]
    });
    for y in 0..8 {
        for x in 0..8 {
            let (a, col, depth) = oracle_pixel([x as f64 + 0.5, y as f64 + 0.5], &t, &z, &c, 0.5, config.background_color);
            assert!((out.object_masks[0].get(x, y, 0) - a).abs() < 1e-9, "mask at {x},{y}");
            for ch in 0..3 {
                assert!((out.color.get(x, y, ch) - col[ch]).abs() < 1e-9, "color at {x},{y}");
            }
            assert_eq!(out.depth.is_valid(x, y), depth.is_some());
            if let Some(d) = depth {
                assert!((out.depth.get(x, y, 0) - d).abs() < 1e-9, "depth at {x},{y}");
            }
        }
    }
}

#[test]
fn object_outside_frustum_has_zero_gradients() {
    let cam = default_camera(16, 16).unwrap();
    let visible = triangle(
        [[2.0, 2.0], [14.0, 3.0], [6.0, 14.0]].map(|[u, v]| at_pixel(&cam, u, v, 3.0)),
        [[0.5, 0.5, 0.5]; 3],
    );
    let behind = triangle(
        [Vec3::new(0.0, 0.0, -2.0), Vec3::new(1.0, 0.0, -2.0), Vec3::new(0.0, 1.0, -2.0)],
        [[0.5, 0.5, 0.5]; 3],
    );
    let aside = triangle(
        [Vec3::new(50.0, 0.0, 3.0), Vec3::new(51.0, 0.0, 3.0), Vec3::new(50.0, 1.0, 3.0)],
        [[0.5, 0.5, 0.5]; 3],
    );
    let scene = Scene {
        objects: vec![object(visible), object(behind), object(aside)],
        background: TriangleMesh::default(),
    };
    let mut adj = RenderAdjoint::zeros(16, 16, 3);
    for b in adj.object_masks.iter_mut() {
        b.data_mut().fill(1.0);
    }
    adj.color.data_mut().fill(1.0);
    adj.coverage.data_mut().fill(1.0);
    adj.depth.data_mut().fill(1.0);
    let g = rasterize_backward(&scene, &cam, &SoftRasterConfig::default(), &adj).unwrap();
    assert!(g.objects[0].translation.norm() > 0.0);
    for o in &g.objects[1..] {
        assert_eq!(o.translation, Vec3::zeros());
        assert_eq!(o.rotation, Vec3::zeros());
        assert_eq!(o.log_scale, Vec3::zeros());
        assert!(o.mesh.positions.iter().all(|p| *p == Vec3::zeros()));
        assert!(o.mesh.colors.iter().flatten().all(|&c| c == 0.0));
    }
}

#[test]
fn non_finite_adjoint_is_rejected() {
    let cam = default_camera(4, 4).unwrap();
    let scene = Scene::default();
    let mut adj = RenderAdjoint::zeros(4, 4, 0);
    adj.color.data_mut()[3] = f64::NAN;
    assert!(matches!(
        rasterize_backward(&scene, &cam, &SoftRasterConfig::default(), &adj),
        Err(scenelift::Error::InvalidArgument(_))
    ));
}

fn mask_loss(out: &RenderOutput, target: &[f64]) -> f64 {
    let m = out.object_masks[0].data();
    m.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m.len() as f64
}

#[test]
fn mask_loss_pulls_object_toward_target() {
    let cam = default_camera(32, 32).unwrap();
    let config = SoftRasterConfig::default();
    let mesh = scenelift::primitives::cuboid(Vec3::new(0.4, 0.4, 0.4), 1, |_| [0.7, 0.2, 0.2]);
    let mut obj = object(mesh);
    obj.affine.translation = Vec3::new(-0.3, 0.0, 3.0);
    let scene = Scene {
        objects: vec![obj],
        background: TriangleMesh::default(),
    };
    // Target strictly right of the rendered object.
    let target: Vec<f64> = (0..32 * 32).map(|i| if (22..30).contains(&(i % 32)) && (12..20).contains(&(i / 32)) { 1.0 } else { 0.0 }).collect();
    let out = rasterize_soft(&scene, &cam, &config);
    let n = (32 * 32) as f64;
    let mut adj = RenderAdjoint::zeros(32, 32, 1);
    for (g, (m, t)) in adj.object_masks[0].data_mut().iter_mut().zip(out.object_masks[0].data().iter().zip(&target)) {
        *g = 2.0 * (m - t) / n;
    }
    let g = rasterize_backward(&scene, &cam, &config, &adj).unwrap();
    assert!(g.objects[0].translation.x < 0.0);
    let mut moved = scene.clone();
    moved.objects[0].affine.translation.x += 0.05;
    assert!(mask_loss(&rasterize_soft(&moved, &cam, &config), &target) < mask_loss(&out, &target));
}

/// A smooth scalar of the render: random linear weights on masks, color and
/// coverage, plus coverage-weighted depth.
struct Probe {
    masks: Vec<Vec<f64>>,
    color: Vec<f64>,
    coverage: Vec<f64>,
    depth: Vec<f64>,
}

impl Probe {
    fn random(rng: &mut ChaCha8Rng, n: usize, objects: usize) -> Self {
        let mut v = |k: usize| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        Self {
            masks: (0..objects).map(|_| v(n)).collect(),
            color: v(3 * n),
            coverage: v(n),
            depth: v(n),
        }
    }

    fn color_only(rng: &mut ChaCha8Rng, n: usize, objects: usize) -> Self {
        let mut p = Self::random(rng, n, objects);
        p.masks.iter_mut().for_each(|m| m.fill(0.0));
        p.coverage.fill(0.0);
        p.depth.fill(0.0);
        p
    }

    fn value(&self, out: &RenderOutput) -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut s = dot(&self.color, out.color.data()) + dot(&self.coverage, out.coverage.data());
        for (w, m) in self.masks.iter().zip(&out.object_masks) {
            s += dot(w, m.data());
        }
        for i in 0..self.depth.len() {
            if out.depth.is_valid_index(i) {
                s += self.depth[i] * out.coverage.data()[i] * out.depth.data()[i];
            }
        }
        s
    }

    fn adjoint(&self, out: &RenderOutput) -> RenderAdjoint {
        let (w, h) = (out.width(), out.height());
        let mut adj = RenderAdjoint::zeros(w, h, self.masks.len());
        for (a, m) in adj.object_masks.iter_mut().zip(&self.masks) {
            a.data_mut().copy_from_slice(m);
        }
        adj.color.data_mut().copy_from_slice(&self.color);
        for i in 0..w * h {
            let mut gc = self.coverage[i];
            if out.depth.is_valid_index(i) {
                gc += self.depth[i] * out.depth.data()[i];
                adj.depth.data_mut()[i] = self.depth[i] * out.coverage.data()[i];
            }
            adj.coverage.data_mut()[i] = gc;
        }
        adj
    }
}

fn random_affine(rng: &mut ChaCha8Rng, depth: f64) -> AffineParams {
    let mut a = AffineParams::identity();
    a.translation = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), depth);
    a.rotate_by_tangent(&Vec3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)));
    a.log_scale = Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
    a
}

fn random_triangle(rng: &mut ChaCha8Rng) -> TriangleMesh {
    loop {
        let v = [0; 3].map(|_| Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.1..0.1)));
        if (v[1] - v[0]).cross(&(v[2] - v[0])).z.abs() > 0.15 {
            let c = [0; 3].map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]);
            return triangle(v, c);
        }
    }
}

/// Three triangles at separated depths over a partial background quad.
fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
    let objects = (0..3)
        .map(|i| SceneObject {
            affine: random_affine(rng, 3.0 + 1.5 * i as f64),
            mesh: random_triangle(rng),
        })
        .collect();
    let (x0, y0) = (rng.gen_range(-2.0..0.0), rng.gen_range(-2.0..0.0));
    let c = |rng: &mut ChaCha8Rng| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
    let background = TriangleMesh::new(
        vec![
            Vec3::new(x0, y0, 10.0),
            Vec3::new(x0 + 4.0, y0, 10.0),
            Vec3::new(x0 + 4.0, y0 + 4.0, 10.5),
            Vec3::new(x0, y0 + 4.0, 10.5),
        ],
        vec![c(rng), c(rng), c(rng), c(rng)],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap();
    Scene { objects, background }
}

fn rel_err(an: &[f64], fd: &[f64]) -> f64 {
    let diff: f64 = an.iter().zip(fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

/// Analytic and central-difference gradients per parameter class.
fn gradient_classes(scene: &Scene, cam: &PinholeCamera, config: &SoftRasterConfig, probe: &Probe, h: f64) -> Vec<(&'static str, Vec<f64>, Vec<f64>)> {
    let out = rasterize_soft(scene, cam, config);
    let g: SceneGradients = rasterize_backward(scene, cam, config, &probe.adjoint(&out)).unwrap();
    let f = |s: &Scene| probe.value(&rasterize_soft(s, cam, config));
    let central = |edit: &dyn Fn(&mut Scene, f64)| {
        let mut p = scene.clone();
        edit(&mut p, h);
        let mut m = scene.clone();
        edit(&mut m, -h);
        (f(&p) - f(&m)) / (2.0 * h)
    };
    let mut classes: Vec<(&'static str, Vec<f64>, Vec<f64>)> = ["translation", "rotation", "log_scale", "position", "color"]
        .iter()
        .map(|n| (*n, Vec::new(), Vec::new()))
        .collect();
    for (oi, og) in g.objects.iter().enumerate() {
        for k in 0..3 {
            classes[0].1.push(og.translation[k]);
            classes[0].2.push(central(&|s, d| s.objects[oi].affine.translation[k] += d));
            classes[1].1.push(og.rotation[k]);
            classes[1].2.push(central(&|s, d| {
                let mut t = Vec3::zeros();
                t[k] = d;
                s.objects[oi].affine.rotate_by_tangent(&t);
            }));
            classes[2].1.push(og.log_scale[k]);
            classes[2].2.push(central(&|s, d| s.objects[oi].affine.log_scale[k] += d));
        }
        for vi in 0..scene.objects[oi].mesh.vertices.len() {
            for k in 0..3 {
                classes[3].1.push(og.mesh.positions[vi][k]);
                classes[3].2.push(central(&|s, d| s.objects[oi].mesh.vertices[vi][k] += d));
                classes[4].1.push(og.mesh.colors[vi][k]);
                classes[4].2.push(central(&|s, d| s.objects[oi].mesh.colors[vi][k] += d));
            }
        }
    }
    for vi in 0..scene.background.vertices.len() {
        for k in 0..3 {
            classes[3].1.push(g.background.positions[vi][k]);
            classes[3].2.push(central(&|s, d| s.background.vertices[vi][k] += d));
            classes[4].1.push(g.background.colors[vi][k]);
            classes[4].2.push(central(&|s, d| s.background.colors[vi][k] += d));
        }
    }
    classes
}

#[test]
fn color_gradient_matches_finite_differences_64() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scene = random_scene(&mut rng);
    let cam = default_camera(64, 64).unwrap();
    let config = SoftRasterConfig::default();
    let probe = Probe::color_only(&mut rng, 64 * 64, 3);
    let out = rasterize_soft(&scene, &cam, &config);
    let g = rasterize_backward(&scene, &cam, &config, &probe.adjoint(&out)).unwrap();
    let h = 1e-3;
    for (oi, og) in g.objects.iter().enumerate() {
        for vi in 0..3 {
            for k in 0..3 {
                let mut p = scene.clone();
                p.objects[oi].mesh.colors[vi][k] += h;
                let mut m = scene.clone();
                m.objects[oi].mesh.colors[vi][k] -= h;
                let fd = (probe.value(&rasterize_soft(&p, &cam, &config)) - probe.value(&rasterize_soft(&m, &cam, &config))) / (2.0 * h);
                let an = og.mesh.colors[vi][k];
                assert!((an - fd).abs() <= 1e-3 * fd.abs().max(1e-6), "object {oi} vertex {vi}: {an} vs {fd}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 20, ..ProptestConfig::default() })]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng);
        let cam = default_camera(24, 24).unwrap();
        let config = SoftRasterConfig::default();
        let probe = Probe::random(&mut rng, 24 * 24, 3);
        for (name, an, fd) in gradient_classes(&scene, &cam, &config, &probe, 1e-6) {
            let tol = if name == "color" { 1e-3 } else { 1e-2 };
            let e = rel_err(&an, &fd);
            prop_assert!(e <= tol, "{} relative error {} (seed {})", name, e, seed);
        }
    }

    #[test]
    fn masks_and_background_partition_unity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scene = random_scene(&mut rng);
        for o in &mut scene.objects {
            o.mesh.colors.iter_mut().for_each(|c| *c = [0.0; 3]);
        }
        scene.background.colors.iter_mut().for_each(|c| *c = [1.0; 3]);
        let cam = default_camera(24, 24).unwrap();
        let config = SoftRasterConfig { background_color: [1.0; 3], ..Default::default() };
        let out = rasterize_soft(&scene, &cam, &config);
        for i in 0..24 * 24 {
            // Color now equals the background-mesh weight plus transmittance.
            let objects: f64 = out.object_masks.iter().map(|m| m.data()[i]).sum();
            prop_assert!((objects + out.color.data()[3 * i] - 1.0).abs() <= 1e-6);
            for m in &out.object_masks {
                prop_assert!((0.0..=1.0).contains(&m.data()[i]));
            }
        }
    }

    #[test]
    fn soft_equals_hard_away_from_edges(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng);
        let cam = default_camera(32, 32).unwrap();
        let config = SoftRasterConfig::default();
        let soft = rasterize_soft(&scene, &cam, &config);
        let hard = rasterize_hard(&scene, &cam, config.background_color, config.far_depth);
        let mut edges: Vec<([f64; 2], [f64; 2])> = Vec::new();
        let world = scene
            .objects
            .iter()
            .map(|o| scenelift::apply_affine(&o.affine, &o.mesh))
            .chain(std::iter::once(scene.background.clone()));
        for m in world {
            for f in &m.faces {
                let s = f.map(|i| {
                    let (u, v, _) = cam.project(&m.vertices[i as usize]).unwrap();
                    [u, v]
                });
                for e in 0..3 {
                    edges.push((s[e], s[(e + 1) % 3]));
                }
            }
        }
        let mut checked = 0;
        for y in 0..32 {
            for x in 0..32 {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let near = edges.iter().any(|(a, b)| {
                    let ab = [b[0] - a[0], b[1] - a[1]];
                    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
                    let d = ((p[0] - a[0] - t * ab[0]).powi(2) + (p[1] - a[1] - t * ab[1]).powi(2)).sqrt();
                    d <= 6.0 * config.sigma
                });
                if near {
                    continue;
                }
                checked += 1;
                for ch in 0..3 {
                    prop_assert!((soft.color.get(x, y, ch) - hard.color.get(x, y, ch)).abs() <= 1e-2);
                }
                for (a, b) in soft.object_masks.iter().zip(&hard.object_masks) {
                    prop_assert!((a.get(x, y, 0) - b.get(x, y, 0)).abs() <= 1e-2);
                }
            }
        }
        prop_assert!(checked > 0);
    }

    #[test]
    fn rendering_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng);
        let cam = default_camera(16, 16).unwrap();
        let config = SoftRasterConfig::default();
        let a = rasterize_soft(&scene, &cam, &config);
        let b = rasterize_soft(&scene, &cam, &config);
        prop_assert_eq!(a, b);
    }
}
