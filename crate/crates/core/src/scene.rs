//! Geometry, camera and trajectory primitives shared by every stage.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra as na;

use crate::error::{Error, Result};

pub type Vec3 = na::Vector3<f64>;
pub type Mat3 = na::Matrix3<f64>;

/// Indexed triangle mesh with one RGB color per vertex.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, colors: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            colors,
            faces,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.len() != self.colors.len() {
            return Err(Error::InvalidArgument(format!(
                "mesh has {} vertices but {} colors",
                self.vertices.len(),
                self.colors.len()
            )));
        }
        let n = self.vertices.len() as u64;
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v as u64 >= n) {
                return Err(Error::InvalidArgument(format!(
                    "face {i} references a vertex out of range"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidArgument(format!("face {i} repeats a vertex")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn bounds(&self) -> Option<SceneBounds> {
        SceneBounds::from_points(self.vertices.iter())
    }

    pub fn centroid(&self) -> Vec3 {
        if self.vertices.is_empty() {
            return Vec3::zeros();
        }
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    /// Merges vertices with bit-identical positions; colors of merged
    /// vertices are averaged. Faces that collapse are dropped.
    pub fn weld(&self) -> TriangleMesh {
        let mut index: HashMap<[u64; 3], u32> = HashMap::new();
        let mut remap = Vec::with_capacity(self.vertices.len());
        let mut vertices = Vec::new();
        let mut color_sums: Vec<([f64; 3], usize)> = Vec::new();
        for (v, c) in self.vertices.iter().zip(&self.colors) {
            let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
            let id = *index.entry(key).or_insert_with(|| {
                vertices.push(*v);
                color_sums.push(([0.0; 3], 0));
                (vertices.len() - 1) as u32
            });
            let slot = &mut color_sums[id as usize];
            for k in 0..3 {
                slot.0[k] += c[k];
            }
            slot.1 += 1;
            remap.push(id);
        }
        let colors = color_sums
            .into_iter()
            .map(|(s, n)| [s[0] / n as f64, s[1] / n as f64, s[2] / n as f64])
            .collect();
        let faces = self
            .faces
            .iter()
            .map(|f| [remap[f[0] as usize], remap[f[1] as usize], remap[f[2] as usize]])
            .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
            .collect();
        TriangleMesh {
            vertices,
            colors,
            faces,
        }
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl SceneBounds {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).any(|k| min[k] > max[k]) {
            return Err(Error::InvalidArgument("bounds min exceeds max".into()));
        }
        Ok(Self { min, max })
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Self { min, max })
    }

    pub fn union(&self, other: &SceneBounds) -> SceneBounds {
        SceneBounds {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn range(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.range().norm()
    }
}

/// Per-object transform: per-axis log scale, then rotation, then translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub translation: Vec3,
    pub rotation: na::UnitQuaternion<f64>,
    pub log_scale: Vec3,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: na::UnitQuaternion::identity(),
            log_scale: Vec3::zeros(),
        }
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        *self.rotation.to_rotation_matrix().matrix()
    }

    #[inline]
    pub fn transform_point(&self, v: &Vec3) -> Vec3 {
        self.rotation * v.component_mul(&self.scale()) + self.translation
    }

    /// Left-multiplies the rotation by `exp([delta]x)` (world-frame tangent).
    pub fn rotate_by_tangent(&mut self, delta: &Vec3) {
        let dq = na::UnitQuaternion::from_scaled_axis(*delta);
        self.rotation = na::UnitQuaternion::new_normalize((dq * self.rotation).into_inner());
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rotation.as_ref().norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "rotation quaternion norm {n} is not unit"
            )));
        }
        if !self.translation.iter().chain(self.log_scale.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite affine parameters".into()));
        }
        Ok(())
    }
}

pub fn apply_affine(params: &AffineParams, mesh: &TriangleMesh) -> TriangleMesh {
    let rot = params.rotation_matrix();
    let scale = params.scale();
    TriangleMesh {
        vertices: mesh
            .vertices
            .iter()
            .map(|v| rot * v.component_mul(&scale) + params.translation)
            .collect(),
        colors: mesh.colors.clone(),
        faces: mesh.faces.clone(),
    }
}

/// Pinhole camera; `rotation`/`translation` map world points into the camera
/// frame (x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub focal: f64,
    pub principal_point: (f64, f64),
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Returned by [`PinholeCamera::project`] for points at or behind the camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BehindCamera;

impl PinholeCamera {
    pub fn new(
        focal: f64,
        principal_point: (f64, f64),
        width: usize,
        height: usize,
        rotation: Mat3,
        translation: Vec3,
    ) -> Result<Self> {
        let cam = Self {
            focal,
            principal_point,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(Error::InvalidArgument("focal must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("camera dimensions must be >= 1".into()));
        }
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument("camera rotation is not a proper rotation".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Projects a world point to pixel coordinates and camera-frame depth.
    pub fn project(&self, point: &Vec3) -> std::result::Result<(f64, f64, f64), BehindCamera> {
        let pc = self.world_to_camera(point);
        if pc.z <= 0.0 {
            return Err(BehindCamera);
        }
        let (cx, cy) = self.principal_point;
        Ok((
            self.focal * pc.x / pc.z + cx,
            self.focal * pc.y / pc.z + cy,
            pc.z,
        ))
    }

    /// Point in the camera frame seen at pixel `(u, v)` with depth `depth`.
    #[inline]
    pub fn unproject_camera(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let (cx, cy) = self.principal_point;
        Vec3::new(
            (u - cx) * depth / self.focal,
            (v - cy) * depth / self.focal,
            depth,
        )
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<Vec3> {
        if !(depth > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "unproject needs positive depth, got {depth}"
            )));
        }
        Ok(self.camera_to_world(&self.unproject_camera(u, v, depth)))
    }

    pub fn with_pose(&self, rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
            ..*self
        }
    }
}

/// Camera at the origin looking down +z, focal length equal to the image
/// diagonal in pixels.
pub fn default_camera(width: usize, height: usize) -> Result<PinholeCamera> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "image dimensions must be >= 1, got {width}x{height}"
        )));
    }
    let (w, h) = (width as f64, height as f64);
    PinholeCamera::new(
        (w * w + h * h).sqrt(),
        (w / 2.0, h / 2.0),
        width,
        height,
        Mat3::identity(),
        Vec3::zeros(),
    )
}

/// Fractions of the scene range swept by the spiral along x, y and z.
pub const SPIRAL_AMPLITUDE: [f64; 3] = [0.4, 0.4, 0.16];

/// Camera-center offset of spiral sample `k` out of `n`, relative to the
/// input center. One full turn; the y term is shifted so sample 0 has zero
/// offset.
pub fn spiral_offset(range: &Vec3, k: usize, n: usize) -> Vec3 {
    let theta = 2.0 * PI * k as f64 / n as f64;
    let [ax, ay, az] = SPIRAL_AMPLITUDE;
    Vec3::new(
        ax * range.x * theta.sin(),
        ay * range.y * theta.cos() - ay * range.y,
        az * range.z * (2.0 * theta).sin(),
    )
}

pub fn spiral_trajectory(
    input: &PinholeCamera,
    bounds: &SceneBounds,
    n: usize,
) -> Result<Vec<PinholeCamera>> {
    if n == 0 {
        return Err(Error::InvalidArgument("spiral needs at least one pose".into()));
    }
    let range = bounds.range();
    if range.iter().all(|&r| r <= 0.0) {
        return Err(Error::InvalidArgument("scene bounds are degenerate".into()));
    }
    let target = bounds.center();
    let c_in = input.center();
    let dir0 = (target - c_in).try_normalize(1e-12);
    let mut poses = Vec::with_capacity(n);
    poses.push(*input);
    for k in 1..n {
        let center = c_in + spiral_offset(&range, k, n);
        // Re-aim: rotate the input orientation by the rotation carrying the
        // input viewing direction of the target onto the new one.
        let aim = match (dir0, (target - center).try_normalize(1e-12)) {
            (Some(d0), Some(dk)) => na::Rotation3::rotation_between(&d0, &dk)
                .map(|r| *r.matrix())
                .unwrap_or_else(Mat3::identity),
            _ => Mat3::identity(),
        };
        let rotation = input.rotation * aim.transpose();
        let translation = -(rotation * center);
        poses.push(input.with_pose(rotation, translation));
    }
    Ok(poses)
}

/// A decomposed scene: transformed object meshes plus a background mesh.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub background: TriangleMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub affine: AffineParams,
    pub mesh: TriangleMesh,
}

impl Scene {
    /// Axis-aligned bounds over every placed object and background vertex.
    pub fn bounds(&self) -> Option<SceneBounds> {
        let placed: Vec<Vec3> = self
            .objects
            .iter()
            .flat_map(|o| o.mesh.vertices.iter().map(move |v| o.affine.transform_point(v)))
            .chain(self.background.vertices.iter().copied())
            .collect();
        SceneBounds::from_points(placed.iter())
    }
}
