use super::geom::{
    barycentric_backward, coverage, edge_functions, inside, segment_distance, segment_distance_backward,
    segment_param_backward, SegmentDistance, TAPER_END,
};
use super::{
    pixel_span, EdgeTopology, ProjectedMesh, RenderAdjoint, RenderOutput, SceneGradients, SoftRasterConfig,
};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::scene::{PinholeCamera, Scene, TriangleMesh, Vec3};

const NONE: u32 = u32::MAX;

/// Soft rasterizer with the edge topology of every mesh precomputed; the
/// topology depends only on face lists, which never change during
/// optimization.
#[derive(Debug, Clone)]
pub struct SoftRenderer {
    topology: Vec<EdgeTopology>,
}

/// Per-layer intermediate buffers kept from the forward pass.
#[derive(Debug, Clone)]
pub struct SoftTape {
    width: usize,
    height: usize,
    layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
struct Layer {
    proj: ProjectedMesh,
    silhouette: Vec<[u32; 2]>,
    /// Front-most face containing the pixel center, or NONE.
    face: Vec<u32>,
    bary: Vec<[f64; 3]>,
    /// Nearest silhouette edge within the coverage band, or NONE.
    sil_edge: Vec<u32>,
    sil: Vec<SegmentDistance>,
    /// Signed silhouette distance (positive inside) and resulting coverage.
    signed: Vec<f64>,
    alpha: Vec<f64>,
    color: Vec<[f64; 3]>,
    depth: Vec<f64>,
}

fn meshes(scene: &Scene) -> impl Iterator<Item = &TriangleMesh> {
    scene.objects.iter().map(|o| &o.mesh).chain(std::iter::once(&scene.background))
}

impl SoftRenderer {
    pub fn new(scene: &Scene) -> Self {
        Self {
            topology: meshes(scene).map(|m| EdgeTopology::new(&m.faces)).collect(),
        }
    }

    fn check_scene(&self, scene: &Scene) {
        assert_eq!(
            self.topology.len(),
            scene.objects.len() + 1,
            "renderer was built for a different scene"
        );
    }

    pub fn forward(&self, scene: &Scene, camera: &PinholeCamera, config: &SoftRasterConfig) -> (RenderOutput, SoftTape) {
        self.check_scene(scene);
        let (w, h) = (camera.width, camera.height);
        let mut layers = Vec::with_capacity(scene.objects.len() + 1);
        for (i, mesh) in meshes(scene).enumerate() {
            let proj = match scene.objects.get(i) {
                Some(o) => ProjectedMesh::of_object(mesh, &o.affine, camera),
                None => ProjectedMesh::of_world(mesh, camera),
            };
            layers.push(build_layer(mesh, proj, &self.topology[i], w, h, config.sigma));
        }
        let tape = SoftTape {
            width: w,
            height: h,
            layers,
        };
        (composite(&tape, scene.objects.len(), config), tape)
    }

    pub fn backward(
        &self,
        scene: &Scene,
        camera: &PinholeCamera,
        config: &SoftRasterConfig,
        tape: &SoftTape,
        adjoint: &RenderAdjoint,
    ) -> Result<SceneGradients> {
        self.check_scene(scene);
        let n_obj = scene.objects.len();
        adjoint.validate(tape.width, tape.height, n_obj)?;
        let n = tape.width * tape.height;
        let n_layers = tape.layers.len();
        let mut g_alpha = vec![vec![0.0; n]; n_layers];
        let mut g_color = vec![vec![[0.0; 3]; n]; n_layers];
        let mut g_depth = vec![vec![0.0; n]; n_layers];

        let mut order: Vec<(f64, usize)> = Vec::with_capacity(n_layers);
        for idx in 0..n {
            collect_order(tape, idx, &mut order);
            if order.is_empty() {
                continue;
            }
            let st = composite_pixel(tape, idx, &order, config);
            let gc = adjoint.color.rgb(idx);
            let gd = adjoint.depth.data()[idx];
            let gcov = adjoint.coverage.data()[idx];
            let bg = config.background_color;
            let g_t = gc[0] * bg[0] + gc[1] * bg[1] + gc[2] * bg[2];
            let k = order.len();
            // Cotangent of each layer's composited weight a_j.
            let mut g_a = [0.0; 16];
            let mut alphas = [0.0; 16];
            for (j, &(z, li)) in order.iter().enumerate() {
                let layer = &tape.layers[li];
                alphas[j] = layer.alpha[idx];
                let c = layer.color[idx];
                let mut g = gcov + gc[0] * c[0] + gc[1] * c[1] + gc[2] * c[2];
                if st.cov > 0.0 {
                    g += gd * (z - st.depth) / st.cov;
                    g_depth[li][idx] += gd * st.a[j] / st.cov;
                }
                if li < n_obj {
                    g += adjoint.object_masks[li].data()[idx];
                }
                g_a[j] = g;
                for ch in 0..3 {
                    g_color[li][idx][ch] += gc[ch] * st.a[j];
                }
            }
            // a_j = alpha_j * prod_{i<j} (1 - alpha_i); T = prod_i (1 - alpha_i).
            for i in 0..k {
                let mut g = g_a[i] * st.prefix[i];
                for j in (i + 1)..k {
                    let mut p = alphas[j];
                    for (l, al) in alphas.iter().enumerate().take(j) {
                        if l != i {
                            p *= 1.0 - al;
                        }
                    }
                    g -= g_a[j] * p;
                }
                let mut pt = 1.0;
                for (l, al) in alphas.iter().enumerate().take(k) {
                    if l != i {
                        pt *= 1.0 - al;
                    }
                }
                g -= g_t * pt;
                g_alpha[order[i].1][idx] = g;
            }
        }

        let mut grads = SceneGradients::zeros(scene);
        for (li, (layer, mesh)) in tape.layers.iter().zip(meshes(scene)).enumerate() {
            let mut g_screen = vec![[0.0; 2]; mesh.vertices.len()];
            let mut g_z = vec![0.0; mesh.vertices.len()];
            let g_col = if li < n_obj {
                &mut grads.objects[li].mesh.colors
            } else {
                &mut grads.background.colors
            };
            layer_backward(
                layer,
                mesh,
                tape.width,
                config.sigma,
                &g_alpha[li],
                &g_color[li],
                &g_depth[li],
                &mut g_screen,
                &mut g_z,
                g_col,
            );
            // Screen-space and depth cotangents back to world-frame positions.
            let (f, rt) = (camera.focal, camera.rotation.transpose());
            let mut g_world = vec![Vec3::zeros(); mesh.vertices.len()];
            for (i, gw) in g_world.iter_mut().enumerate() {
                if !layer.proj.vertex_ok[i] {
                    continue;
                }
                let [gu, gv] = g_screen[i];
                if gu == 0.0 && gv == 0.0 && g_z[i] == 0.0 {
                    continue;
                }
                let pc = layer.proj.cam[i];
                let iz = 1.0 / pc.z;
                let gc = Vec3::new(
                    gu * f * iz,
                    gv * f * iz,
                    g_z[i] - (gu * f * pc.x + gv * f * pc.y) * iz * iz,
                );
                *gw = rt * gc;
            }
            if li < n_obj {
                let affine = &scene.objects[li].affine;
                let rot = affine.rotation_matrix();
                let scale = affine.scale();
                let og = &mut grads.objects[li];
                for (i, gw) in g_world.iter().enumerate() {
                    if *gw == Vec3::zeros() {
                        continue;
                    }
                    let scaled = mesh.vertices[i].component_mul(&scale);
                    let rotated = rot * scaled;
                    let local = rot.transpose() * gw;
                    og.translation += gw;
                    og.rotation += rotated.cross(gw);
                    og.log_scale += scaled.component_mul(&local);
                    og.mesh.positions[i] += scale.component_mul(&local);
                }
            } else {
                grads.background.positions = g_world;
            }
        }
        Ok(grads)
    }
}

/// Soft rendering of the scene.
pub fn rasterize_soft(scene: &Scene, camera: &PinholeCamera, config: &SoftRasterConfig) -> RenderOutput {
    SoftRenderer::new(scene).forward(scene, camera, config).0
}

/// Gradients of the soft rendering contracted with `adjoint`.
pub fn rasterize_backward(
    scene: &Scene,
    camera: &PinholeCamera,
    config: &SoftRasterConfig,
    adjoint: &RenderAdjoint,
) -> Result<SceneGradients> {
    config.validate()?;
    if adjoint.color.width() != camera.width || adjoint.color.height() != camera.height {
        return Err(Error::InvalidArgument("adjoint does not match the camera size".into()));
    }
    let renderer = SoftRenderer::new(scene);
    let (_, tape) = renderer.forward(scene, camera, config);
    renderer.backward(scene, camera, config, &tape, adjoint)
}

fn build_layer(mesh: &TriangleMesh, proj: ProjectedMesh, topo: &EdgeTopology, w: usize, h: usize, sigma: f64) -> Layer {
    let n = w * h;
    let mut face = vec![NONE; n];
    let mut bary = vec![[0.0; 3]; n];
    let mut zbuf = vec![f64::INFINITY; n];

    for (fi, f) in mesh.faces.iter().enumerate() {
        let area2 = proj.area2[fi];
        if area2 == 0.0 {
            continue;
        }
        let t = f.map(|i| proj.screen[i as usize]);
        let z = f.map(|i| proj.cam[i as usize].z);
        let (lo_u, hi_u) = (t[0][0].min(t[1][0]).min(t[2][0]), t[0][0].max(t[1][0]).max(t[2][0]));
        let (lo_v, hi_v) = (t[0][1].min(t[1][1]).min(t[2][1]), t[0][1].max(t[1][1]).max(t[2][1]));
        let (Some((x0, x1)), Some((y0, y1))) = (pixel_span(lo_u, hi_u, w), pixel_span(lo_v, hi_v, h)) else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let e = edge_functions(p, &t);
                if !inside(&e, area2) {
                    continue;
                }
                let b = [e[0] / area2, e[1] / area2, e[2] / area2];
                let depth = 1.0 / (b[0] / z[0] + b[1] / z[1] + b[2] / z[2]);
                let idx = y * w + x;
                if depth < zbuf[idx] {
                    zbuf[idx] = depth;
                    face[idx] = fi as u32;
                    bary[idx] = b;
                }
            }
        }
    }

    let silhouette = topo.silhouette(&proj.area2);
    let band = TAPER_END * sigma;
    let mut sil_edge = vec![NONE; n];
    let mut sil = vec![
        SegmentDistance {
            dist: f64::INFINITY,
            t: 0.0
        };
        n
    ];
    for (ei, &[va, vb]) in silhouette.iter().enumerate() {
        let a = proj.screen[va as usize];
        let b = proj.screen[vb as usize];
        let (Some((x0, x1)), Some((y0, y1))) = (
            pixel_span(a[0].min(b[0]) - band, a[0].max(b[0]) + band, w),
            pixel_span(a[1].min(b[1]) - band, a[1].max(b[1]) + band, h),
        ) else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let sd = segment_distance(p, a, b);
                let idx = y * w + x;
                if sd.dist < band && sd.dist < sil[idx].dist {
                    sil[idx] = sd;
                    sil_edge[idx] = ei as u32;
                }
            }
        }
    }

    let mut signed = vec![f64::NEG_INFINITY; n];
    let mut alpha = vec![0.0; n];
    let mut color = vec![[0.0; 3]; n];
    let mut depth = vec![0.0; n];
    for idx in 0..n {
        if face[idx] != NONE {
            let d = if sil_edge[idx] != NONE { sil[idx].dist } else { f64::INFINITY };
            signed[idx] = d;
            alpha[idx] = coverage(d / sigma).0;
            let f = mesh.faces[face[idx] as usize];
            let b = bary[idx];
            let mut c = [0.0; 3];
            for k in 0..3 {
                let vc = mesh.colors[f[k] as usize];
                for ch in 0..3 {
                    c[ch] += b[k] * vc[ch];
                }
            }
            color[idx] = c;
            depth[idx] = zbuf[idx];
        } else if sil_edge[idx] != NONE {
            let d = -sil[idx].dist;
            let a = coverage(d / sigma).0;
            signed[idx] = d;
            if a <= 0.0 {
                continue;
            }
            alpha[idx] = a;
            let [va, vb] = silhouette[sil_edge[idx] as usize];
            let t = sil[idx].t;
            let (ca, cb) = (mesh.colors[va as usize], mesh.colors[vb as usize]);
            color[idx] = [0, 1, 2].map(|ch| (1.0 - t) * ca[ch] + t * cb[ch]);
            let (za, zb) = (proj.cam[va as usize].z, proj.cam[vb as usize].z);
            depth[idx] = 1.0 / ((1.0 - t) / za + t / zb);
        }
    }

    Layer {
        proj,
        silhouette,
        face,
        bary,
        sil_edge,
        sil,
        signed,
        alpha,
        color,
        depth,
    }
}

/// Layers with nonzero coverage at a pixel, sorted front to back.
fn collect_order(tape: &SoftTape, idx: usize, order: &mut Vec<(f64, usize)>) {
    order.clear();
    for (li, layer) in tape.layers.iter().enumerate() {
        if layer.alpha[idx] > 0.0 {
            order.push((layer.depth[idx], li));
        }
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
}

struct PixelComposite {
    a: [f64; 16],
    prefix: [f64; 16],
    transmittance: f64,
    cov: f64,
    depth: f64,
    color: [f64; 3],
}

fn composite_pixel(tape: &SoftTape, idx: usize, order: &[(f64, usize)], config: &SoftRasterConfig) -> PixelComposite {
    assert!(order.len() <= 16, "too many overlapping layers");
    let mut st = PixelComposite {
        a: [0.0; 16],
        prefix: [0.0; 16],
        transmittance: 1.0,
        cov: 0.0,
        depth: 0.0,
        color: [0.0; 3],
    };
    let mut zsum = 0.0;
    for (j, &(z, li)) in order.iter().enumerate() {
        let layer = &tape.layers[li];
        let al = layer.alpha[idx];
        st.prefix[j] = st.transmittance;
        let a = al * st.transmittance;
        st.a[j] = a;
        st.cov += a;
        zsum += a * z;
        let c = layer.color[idx];
        for ch in 0..3 {
            st.color[ch] += a * c[ch];
        }
        st.transmittance *= 1.0 - al;
    }
    for ch in 0..3 {
        st.color[ch] += st.transmittance * config.background_color[ch];
    }
    if st.cov > 0.0 {
        st.depth = zsum / st.cov;
    }
    st
}

fn composite(tape: &SoftTape, n_obj: usize, config: &SoftRasterConfig) -> RenderOutput {
    let (w, h) = (tape.width, tape.height);
    let n = w * h;
    let mut masks = vec![ImageBuffer::new(w, h, 1); n_obj];
    let mut color = ImageBuffer::from_rgb(w, h, config.background_color);
    let mut depth = ImageBuffer::filled(w, h, 1, config.far_depth);
    let mut coverage = ImageBuffer::new(w, h, 1);
    let mut valid = vec![false; n];
    let mut order = Vec::with_capacity(tape.layers.len());
    for idx in 0..n {
        collect_order(tape, idx, &mut order);
        if order.is_empty() {
            continue;
        }
        let st = composite_pixel(tape, idx, &order, config);
        color.set_rgb(idx, st.color);
        coverage.data_mut()[idx] = st.cov;
        if st.cov > 0.0 {
            valid[idx] = true;
            depth.data_mut()[idx] = st.depth;
        }
        for (j, &(_, li)) in order.iter().enumerate() {
            if li < n_obj {
                masks[li].data_mut()[idx] = st.a[j];
            }
        }
    }
    depth.set_validity(Some(valid));
    RenderOutput {
        object_masks: masks,
        depth,
        color,
        coverage,
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    layer: &Layer,
    mesh: &TriangleMesh,
    width: usize,
    sigma: f64,
    g_alpha: &[f64],
    g_color: &[[f64; 3]],
    g_depth: &[f64],
    g_screen: &mut [[f64; 2]],
    g_z: &mut [f64],
    g_col: &mut [[f64; 3]],
) {
    let proj = &layer.proj;
    for idx in 0..layer.alpha.len() {
        if layer.alpha[idx] <= 0.0 {
            continue;
        }
        let (ga, gc, gd) = (g_alpha[idx], g_color[idx], g_depth[idx]);
        if ga == 0.0 && gd == 0.0 && gc == [0.0; 3] {
            continue;
        }
        let p = [(idx % width) as f64 + 0.5, (idx / width) as f64 + 0.5];
        let signed = layer.signed[idx];
        let g_signed = if signed.is_finite() {
            ga * coverage(signed / sigma).1 / sigma
        } else {
            0.0
        };
        let z_out = layer.depth[idx];

        if layer.face[idx] != NONE {
            let f = mesh.faces[layer.face[idx] as usize];
            let b = layer.bary[idx];
            let mut g_b = [0.0; 3];
            for k in 0..3 {
                let vi = f[k] as usize;
                let col = mesh.colors[vi];
                let zi = proj.cam[vi].z;
                for ch in 0..3 {
                    g_col[vi][ch] += b[k] * gc[ch];
                    g_b[k] += gc[ch] * col[ch];
                }
                g_b[k] -= gd * z_out * z_out / zi;
                g_z[vi] += gd * z_out * z_out * b[k] / (zi * zi);
            }
            let t = f.map(|i| proj.screen[i as usize]);
            let area2 = proj.area2[layer.face[idx] as usize];
            let gv = barycentric_backward(p, &t, &b, area2, &g_b);
            for k in 0..3 {
                let s = &mut g_screen[f[k] as usize];
                s[0] += gv[k][0];
                s[1] += gv[k][1];
            }
        } else {
            // Outside the mesh: attributes at the closest silhouette point.
            let [va, vb] = layer.silhouette[layer.sil_edge[idx] as usize];
            let (va, vb) = (va as usize, vb as usize);
            let sd = layer.sil[idx];
            let (ca, cb) = (mesh.colors[va], mesh.colors[vb]);
            let (za, zb) = (proj.cam[va].z, proj.cam[vb].z);
            let mut g_t = 0.0;
            for ch in 0..3 {
                g_col[va][ch] += (1.0 - sd.t) * gc[ch];
                g_col[vb][ch] += sd.t * gc[ch];
                g_t += gc[ch] * (cb[ch] - ca[ch]);
            }
            let z2 = z_out * z_out;
            g_t -= gd * z2 * (1.0 / zb - 1.0 / za);
            g_z[va] += gd * z2 * (1.0 - sd.t) / (za * za);
            g_z[vb] += gd * z2 * sd.t / (zb * zb);
            let (a, b) = (proj.screen[va], proj.screen[vb]);
            let (ta, tb) = segment_param_backward(p, a, b, sd.t);
            for c in 0..2 {
                g_screen[va][c] += g_t * ta[c];
                g_screen[vb][c] += g_t * tb[c];
            }
        }

        if g_signed != 0.0 && layer.sil_edge[idx] != NONE {
            let [va, vb] = layer.silhouette[layer.sil_edge[idx] as usize];
            let (va, vb) = (va as usize, vb as usize);
            let (a, b) = (proj.screen[va], proj.screen[vb]);
            let sd = layer.sil[idx];
            let (da, db) = segment_distance_backward(p, a, b, &sd);
            // signed = +dist inside, -dist outside.
            let g_dist = if layer.face[idx] != NONE { g_signed } else { -g_signed };
            for c in 0..2 {
                g_screen[va][c] += g_dist * da[c];
                g_screen[vb][c] += g_dist * db[c];
            }
        }
    }
}
