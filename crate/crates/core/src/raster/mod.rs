//! Hard (z-buffered) and soft (differentiable) rasterization of a scene of
//! placed object meshes over a background mesh.
//!
//! The soft path treats every mesh as one layer. Inside a layer the visible
//! triangle is selected by depth, exactly as in the hard path; the layer's
//! coverage is a smooth function of the signed screen distance to the mesh's
//! silhouette edges. Layers are composited front to back by depth over a
//! background slot, so masks, color and depth are continuous in every
//! vertex, color and pose parameter.

mod geom;
mod hard;
mod soft;

pub use geom::{coverage, TAPER_END, TAPER_START};
pub use hard::rasterize_hard;
pub use soft::{rasterize_backward, rasterize_soft, SoftRenderer, SoftTape};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::scene::{PinholeCamera, Scene, TriangleMesh, Vec3};

/// Vertices closer than this to the camera plane disable their faces.
pub const NEAR_PLANE: f64 = 1e-4;
/// Faces with a smaller doubled screen area are treated as degenerate.
pub const MIN_AREA2: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftRasterConfig {
    /// Width of the silhouette coverage ramp, in pixels.
    pub sigma: f64,
    pub background_color: [f64; 3],
    /// Depth reported at uncovered pixels.
    pub far_depth: f64,
}

impl Default for SoftRasterConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            background_color: [0.5; 3],
            far_depth: 100.0,
        }
    }
}

impl SoftRasterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Rendered object masks, depth, color and total surface coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub object_masks: Vec<ImageBuffer>,
    /// Depth with a validity mask marking covered pixels.
    pub depth: ImageBuffer,
    pub color: ImageBuffer,
    /// Fraction of each pixel covered by any mesh (1 minus background weight).
    pub coverage: ImageBuffer,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }
}

/// Cotangents of a [`RenderOutput`], one buffer per output.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderAdjoint {
    pub object_masks: Vec<ImageBuffer>,
    pub depth: ImageBuffer,
    pub color: ImageBuffer,
    pub coverage: ImageBuffer,
}

impl RenderAdjoint {
    pub fn zeros(width: usize, height: usize, objects: usize) -> Self {
        Self {
            object_masks: vec![ImageBuffer::new(width, height, 1); objects],
            depth: ImageBuffer::new(width, height, 1),
            color: ImageBuffer::new(width, height, 3),
            coverage: ImageBuffer::new(width, height, 1),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.object_masks
            .iter()
            .chain([&self.depth, &self.color, &self.coverage])
            .all(|b| b.data().iter().all(|v| v.is_finite()))
    }

    pub fn validate(&self, width: usize, height: usize, objects: usize) -> Result<()> {
        if self.object_masks.len() != objects {
            return Err(Error::InvalidArgument(format!(
                "adjoint has {} object masks, scene has {objects} objects",
                self.object_masks.len()
            )));
        }
        let bufs = self
            .object_masks
            .iter()
            .chain([&self.depth, &self.color, &self.coverage]);
        for b in bufs {
            if b.width() != width || b.height() != height {
                return Err(Error::InvalidArgument("adjoint size does not match render".into()));
            }
            if b.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("adjoint contains non-finite values".into()));
            }
        }
        if self.color.channels() != 3 || self.depth.channels() != 1 {
            return Err(Error::InvalidArgument("adjoint channel layout mismatch".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeshGradients {
    pub positions: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
}

impl MeshGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![Vec3::zeros(); n],
            colors: vec![[0.0; 3]; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self.colors.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectGradients {
    pub translation: Vec3,
    /// Gradient with respect to a world-frame rotation tangent applied on the left.
    pub rotation: Vec3,
    pub log_scale: Vec3,
    pub mesh: MeshGradients,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradients {
    pub objects: Vec<ObjectGradients>,
    pub background: MeshGradients,
}

impl SceneGradients {
    pub fn zeros(scene: &Scene) -> Self {
        Self {
            objects: scene
                .objects
                .iter()
                .map(|o| ObjectGradients {
                    translation: Vec3::zeros(),
                    rotation: Vec3::zeros(),
                    log_scale: Vec3::zeros(),
                    mesh: MeshGradients::zeros(o.mesh.vertices.len()),
                })
                .collect(),
            background: MeshGradients::zeros(scene.background.vertices.len()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.background.is_finite()
            && self.objects.iter().all(|o| {
                o.mesh.is_finite()
                    && o.translation
                        .iter()
                        .chain(o.rotation.iter())
                        .chain(o.log_scale.iter())
                        .all(|v| v.is_finite())
            })
    }
}

/// Mesh vertices mapped to pixel coordinates and camera-frame depth.
#[derive(Debug, Clone)]
pub(crate) struct ProjectedMesh {
    pub screen: Vec<[f64; 2]>,
    /// Camera-frame position of every vertex.
    pub cam: Vec<Vec3>,
    pub vertex_ok: Vec<bool>,
    /// Doubled signed screen area per face; 0 for faces that are disabled.
    pub area2: Vec<f64>,
}

impl ProjectedMesh {
    pub fn new(world: impl Iterator<Item = Vec3>, faces: &[[u32; 3]], camera: &PinholeCamera) -> Self {
        let (cx, cy) = camera.principal_point;
        let f = camera.focal;
        let mut screen = Vec::new();
        let mut cam = Vec::new();
        let mut vertex_ok = Vec::new();
        for p in world {
            let pc = camera.world_to_camera(&p);
            let ok = pc.z > NEAR_PLANE && pc.iter().all(|v| v.is_finite());
            let s = if ok {
                [f * pc.x / pc.z + cx, f * pc.y / pc.z + cy]
            } else {
                [0.0, 0.0]
            };
            screen.push(s);
            cam.push(pc);
            vertex_ok.push(ok);
        }
        let area2 = faces
            .iter()
            .map(|face| {
                if face.iter().all(|&i| vertex_ok[i as usize]) {
                    let t = face.map(|i| screen[i as usize]);
                    let a = geom::signed_area2(&t);
                    if a.abs() > MIN_AREA2 {
                        return a;
                    }
                }
                0.0
            })
            .collect();
        Self {
            screen,
            cam,
            vertex_ok,
            area2,
        }
    }

    pub fn of_object(mesh: &TriangleMesh, affine: &crate::scene::AffineParams, camera: &PinholeCamera) -> Self {
        let rot = affine.rotation_matrix();
        let scale = affine.scale();
        Self::new(
            mesh.vertices
                .iter()
                .map(|v| rot * v.component_mul(&scale) + affine.translation),
            &mesh.faces,
            camera,
        )
    }

    pub fn of_world(mesh: &TriangleMesh, camera: &PinholeCamera) -> Self {
        Self::new(mesh.vertices.iter().copied(), &mesh.faces, camera)
    }
}

/// Edge-to-face adjacency of a mesh, fixed by its face list.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeTopology {
    pub edges: Vec<TopoEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopoEdge {
    pub v: [u32; 2],
    /// First two adjacent faces; `u32::MAX` when absent.
    pub faces: [u32; 2],
    pub face_count: u32,
}

impl EdgeTopology {
    pub fn new(faces: &[[u32; 3]]) -> Self {
        let mut half: Vec<(u32, u32, u32)> = Vec::with_capacity(faces.len() * 3);
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                half.push((a.min(b), a.max(b), fi as u32));
            }
        }
        half.sort_unstable();
        let mut edges: Vec<TopoEdge> = Vec::new();
        for (a, b, fi) in half {
            match edges.last_mut() {
                Some(e) if e.v == [a, b] => {
                    if e.face_count < 2 {
                        e.faces[e.face_count as usize] = fi;
                    }
                    e.face_count += 1;
                }
                _ => edges.push(TopoEdge {
                    v: [a, b],
                    faces: [fi, u32::MAX],
                    face_count: 1,
                }),
            }
        }
        Self { edges }
    }

    /// Edges on the screen-space outline of the enabled faces: boundary
    /// edges, edges between front- and back-facing faces, and non-manifold
    /// edges.
    pub(crate) fn silhouette(&self, area2: &[f64]) -> Vec<[u32; 2]> {
        let mut out = Vec::new();
        for e in &self.edges {
            if e.face_count > 2 {
                let any = e.faces.iter().any(|&f| f != u32::MAX && area2[f as usize] != 0.0);
                if any {
                    out.push(e.v);
                }
                continue;
            }
            let s0 = area2[e.faces[0] as usize];
            let s1 = if e.face_count == 2 { area2[e.faces[1] as usize] } else { 0.0 };
            let on = match (s0 != 0.0, s1 != 0.0) {
                (true, true) => (s0 > 0.0) != (s1 > 0.0),
                (true, false) | (false, true) => true,
                (false, false) => false,
            };
            if on {
                out.push(e.v);
            }
        }
        out
    }
}

/// Inclusive pixel-index range whose pixel centers may fall in `[lo, hi]`.
#[inline]
pub(crate) fn pixel_span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let a = (lo - 0.5).ceil().max(0.0);
    let b = (hi - 0.5).floor().min(n as f64 - 1.0);
    if !(a <= b) {
        return None;
    }
    Some((a as usize, b as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_counts_shared_edges() {
        let t = EdgeTopology::new(&[[0, 1, 2], [2, 1, 3]]);
        assert_eq!(t.edges.len(), 5);
        let shared = t.edges.iter().find(|e| e.v == [1, 2]).unwrap();
        assert_eq!(shared.face_count, 2);
        // Same winding in screen space: only the 4 outer edges are silhouette.
        assert_eq!(t.silhouette(&[1.0, 1.0]).len(), 4);
        // Folded: the shared edge becomes silhouette too.
        assert_eq!(t.silhouette(&[1.0, -1.0]).len(), 5);
        assert_eq!(t.silhouette(&[0.0, 1.0]).len(), 3);
    }

    #[test]
    fn pixel_span_uses_pixel_centers() {
        assert_eq!(pixel_span(0.0, 1.0, 4), Some((0, 0)));
        assert_eq!(pixel_span(0.6, 1.4, 4), None);
        assert_eq!(pixel_span(-3.0, 10.0, 4), Some((0, 3)));
    }
}
