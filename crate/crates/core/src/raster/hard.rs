use super::geom::{edge_functions, inside};
use super::{pixel_span, ProjectedMesh, RenderOutput};
use crate::image::ImageBuffer;
use crate::scene::{PinholeCamera, Scene, TriangleMesh};

const NONE: u32 = u32::MAX;

/// Z-buffered nearest-surface rendering at pixel centers. Object mask `i` is
/// 1 exactly where object `i` owns the visible surface; colors are
/// screen-space barycentric interpolations of vertex colors.
pub fn rasterize_hard(
    scene: &Scene,
    camera: &PinholeCamera,
    background_color: [f64; 3],
    far_depth: f64,
) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let n = w * h;
    let mut zbuf = vec![f64::INFINITY; n];
    let mut owner = vec![NONE; n];
    let mut color = ImageBuffer::from_rgb(w, h, background_color);

    let meshes: Vec<(&TriangleMesh, ProjectedMesh)> = scene
        .objects
        .iter()
        .map(|o| (&o.mesh, ProjectedMesh::of_object(&o.mesh, &o.affine, camera)))
        .chain(std::iter::once((
            &scene.background,
            ProjectedMesh::of_world(&scene.background, camera),
        )))
        .collect();

    for (mi, (mesh, proj)) in meshes.iter().enumerate() {
        for (fi, face) in mesh.faces.iter().enumerate() {
            let area2 = proj.area2[fi];
            if area2 == 0.0 {
                continue;
            }
            let t = face.map(|i| proj.screen[i as usize]);
            let z = face.map(|i| proj.cam[i as usize].z);
            let (lo_u, hi_u) = min_max(t.iter().map(|p| p[0]));
            let (lo_v, hi_v) = min_max(t.iter().map(|p| p[1]));
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
                        owner[idx] = mi as u32;
                        let mut c = [0.0; 3];
                        for k in 0..3 {
                            let vc = mesh.colors[face[k] as usize];
                            for ch in 0..3 {
                                c[ch] += b[k] * vc[ch];
                            }
                        }
                        color.set_rgb(idx, c);
                    }
                }
            }
        }
    }

    let n_obj = scene.objects.len();
    let mut masks = vec![ImageBuffer::new(w, h, 1); n_obj];
    let mut depth = ImageBuffer::filled(w, h, 1, far_depth);
    let mut coverage = ImageBuffer::new(w, h, 1);
    let mut valid = vec![false; n];
    for idx in 0..n {
        let o = owner[idx];
        if o == NONE {
            continue;
        }
        valid[idx] = true;
        depth.data_mut()[idx] = zbuf[idx];
        coverage.data_mut()[idx] = 1.0;
        if (o as usize) < n_obj {
            masks[o as usize].data_mut()[idx] = 1.0;
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

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}
