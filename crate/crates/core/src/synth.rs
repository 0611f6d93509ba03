//! Procedural ground-truth scenes: textured primitives in front of a tilted,
//! textured back plane, with renders, masks, depth, normals, oracle provider
//! data and a pose/color perturbation for recovery tests.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra as na;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{object_stem, SceneBundle};
use crate::error::{Error, Result};
use crate::formats::{encode_pfm, encode_ply, encode_png, write_pfm, write_png, write_png_mask};
use crate::image::ImageBuffer;
use crate::lifter::{crop_and_center, normalize_mesh};
use crate::primitives::{cuboid, grid, icosphere};
use crate::providers::mock::oracle_files;
use crate::providers::{MockSpec, ProviderKind, ProviderSpec, ProvidersConfig};
use crate::raster::rasterize_hard;
use crate::pipeline::GroundTruth;
use crate::scene::{apply_affine, default_camera, spiral_trajectory, AffineParams, PinholeCamera, Scene, SceneObject, TriangleMesh, Vec3};

pub const BACKGROUND_GREY: [f64; 3] = [127.0 / 255.0; 3];
pub const FAR_DEPTH: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Back-plane depth on the optical axis.
    pub plane_depth: f64,
    /// Back-plane tilt about the camera x axis, degrees.
    pub plane_tilt_deg: f64,
    pub plane_grid: usize,
    pub object_depth: [f64; 2],
    /// Bounding-box diagonal of each placed object.
    pub object_size: [f64; 2],
    pub perturbation: PerturbationConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            min_objects: 1,
            max_objects: 5,
            plane_depth: 1.3,
            plane_tilt_deg: 20.0,
            plane_grid: 32,
            object_depth: [0.75, 1.0],
            object_size: [0.16, 0.26],
            perturbation: PerturbationConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width < 16 || self.height < 16 {
            return bad("synthetic images must be at least 16x16");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > 5 {
            return bad("object count range must lie within 1..=5");
        }
        let [d0, d1] = self.object_depth;
        let [s0, s1] = self.object_size;
        if !(d0 > 0.0 && d0 <= d1 && s0 > 0.0 && s0 <= s1 && d1 + s1 < self.plane_depth) {
            return bad("objects must sit between the camera and the back plane");
        }
        if !(self.plane_tilt_deg.abs() < 60.0) || self.plane_grid == 0 {
            return bad("plane tilt must be below 60 degrees and the grid nonempty");
        }
        self.perturbation.validate()
    }
}

/// Bounds of the recovery perturbation. Translation is a fraction of the
/// scene bounding-box diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub translation: f64,
    pub rotation_deg: f64,
    /// Per-axis relative scale change.
    pub scale: f64,
    /// Per-channel color shift.
    pub color: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            translation: 0.1,
            rotation_deg: 10.0,
            scale: 0.1,
            color: 0.2,
        }
    }
}

impl PerturbationConfig {
    pub fn zero() -> Self {
        Self {
            translation: 0.0,
            rotation_deg: 0.0,
            scale: 0.0,
            color: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.translation, self.rotation_deg, self.scale, self.color];
        if !v.iter().all(|x| *x >= 0.0 && x.is_finite()) || self.scale >= 1.0 {
            return Err(Error::Config("perturbation bounds must be non-negative and scale below 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Cube,
    Sphere,
    ExtrudedBox,
}

impl PrimitiveKind {
    fn noun(self) -> &'static str {
        match self {
            PrimitiveKind::Cube => "cube",
            PrimitiveKind::Sphere => "sphere",
            PrimitiveKind::ExtrudedBox => "box",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPerturbation {
    pub id: usize,
    pub translation: [f64; 3],
    /// World-frame rotation vector applied on the left.
    pub rotation: [f64; 3],
    pub log_scale: [f64; 3],
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Scene bounding-box diagonal the translation bound refers to.
    pub scene_diagonal: f64,
    pub objects: Vec<ObjectPerturbation>,
}

const MAX_DRAWS: usize = 100;

impl Perturbation {
    /// Draws offsets within the configured bounds. Translations that would
    /// push any vertex of an object out of `camera`'s frame are redrawn.
    pub fn sample(rng: &mut impl Rng, scene: &Scene, camera: &PinholeCamera, config: &PerturbationConfig) -> Result<Self> {
        let diag = scene
            .bounds()
            .ok_or_else(|| Error::InvalidArgument("scene has no vertices".into()))?
            .diagonal();
        let objects = (0..scene.objects.len())
            .map(|id| {
                let placed = apply_affine(&scene.objects[id].affine, &scene.objects[id].mesh);
                let in_frame = |t: &Vec3| {
                    placed.vertices.iter().all(|v| match camera.project(&(v + t)) {
                        Ok((u, w, _)) => u >= 0.0 && w >= 0.0 && u <= camera.width as f64 && w <= camera.height as f64,
                        Err(_) => false,
                    })
                };
                let mut t = Vec3::zeros();
                for _ in 0..MAX_DRAWS {
                    let c = unit_vector(rng) * rng.gen_range(0.0..=1.0) * config.translation * diag;
                    if in_frame(&c) {
                        t = c;
                        break;
                    }
                }
                let r = unit_vector(rng) * rng.gen_range(0.0..=1.0) * config.rotation_deg.to_radians();
                let s = [0; 3].map(|_| (1.0 + rng.gen_range(-1.0..=1.0) * config.scale).ln());
                let c = [0; 3].map(|_| rng.gen_range(-1.0..=1.0) * config.color);
                ObjectPerturbation {
                    id,
                    translation: t.into(),
                    rotation: r.into(),
                    log_scale: s,
                    color: c,
                }
            })
            .collect();
        Ok(Self {
            scene_diagonal: diag,
            objects,
        })
    }

    /// Applies every object offset; colors are clamped to `[0, 1]`.
    pub fn apply(&self, scene: &Scene) -> Result<Scene> {
        let mut out = scene.clone();
        for p in &self.objects {
            let o = out
                .objects
                .get_mut(p.id)
                .ok_or_else(|| Error::InvalidArgument(format!("perturbation names unknown object {}", p.id)))?;
            o.affine.translation += Vec3::from(p.translation);
            o.affine.rotate_by_tangent(&Vec3::from(p.rotation));
            o.affine.log_scale += Vec3::from(p.log_scale);
            for c in &mut o.mesh.colors {
                *c = [0, 1, 2].map(|k| (c[k] + p.color[k]).clamp(0.0, 1.0));
            }
        }
        Ok(out)
    }
}

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// HSV to RGB, all components in `[0, 1]`.
fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn hue_name(h: f64) -> &'static str {
    const NAMES: [&str; 8] = ["red", "orange", "yellow", "green", "cyan", "blue", "purple", "magenta"];
    let bins = [0.0, 0.06, 0.12, 0.22, 0.45, 0.55, 0.7, 0.8, 0.95];
    let h = h.rem_euclid(1.0);
    for k in 0..8 {
        if h >= bins[k] && h < bins[k + 1] {
            return NAMES[k];
        }
    }
    NAMES[0]
}

/// Unit-diagonal local mesh of the given kind with a per-vertex texture
/// around `base`.
fn primitive_mesh(kind: PrimitiveKind, base: [f64; 3], freq: f64) -> Result<TriangleMesh> {
    let shade = move |p: &Vec3| {
        let t = 0.06 * (freq * (p.x + 0.7 * p.y - 0.4 * p.z)).sin();
        base.map(|c| (c + t).clamp(0.0, 1.0))
    };
    let mesh = match kind {
        PrimitiveKind::Cube => cuboid(Vec3::repeat(1.0), 3, shade),
        PrimitiveKind::Sphere => icosphere(0.5, 2, shade),
        PrimitiveKind::ExtrudedBox => cuboid(Vec3::new(1.0, 0.45, 0.35), 3, shade),
    };
    normalize_mesh(&mesh)
}

/// Pixel footprint check for a bounding sphere.
struct Disc {
    u: f64,
    v: f64,
    r: f64,
}

/// Camera-frame unit normal of every visible surface, rendered through the
/// hard rasterizer with flat per-face colors.
pub fn render_normals(scene: &Scene, camera: &PinholeCamera) -> ImageBuffer {
    let flat = |mesh: &TriangleMesh, place: &dyn Fn(&Vec3) -> Vec3| {
        let mut out = TriangleMesh::default();
        for f in &mesh.faces {
            let [a, b, c] = f.map(|i| camera.world_to_camera(&place(&mesh.vertices[i as usize])));
            let mut n = (b - a).cross(&(c - a)).try_normalize(0.0).unwrap_or_else(Vec3::zeros);
            if n.dot(&a) > 0.0 {
                n = -n;
            }
            let col = [0, 1, 2].map(|k| 0.5 * (n[k] + 1.0));
            let base = out.vertices.len() as u32;
            for &i in f {
                out.vertices.push(place(&mesh.vertices[i as usize]));
                out.colors.push(col);
            }
            out.faces.push([base, base + 1, base + 2]);
        }
        out
    };
    let coded = Scene {
        objects: scene
            .objects
            .iter()
            .map(|o| SceneObject {
                affine: AffineParams::identity(),
                mesh: flat(&o.mesh, &|v| o.affine.transform_point(v)),
            })
            .collect(),
        background: flat(&scene.background, &|v| *v),
    };
    let out = rasterize_hard(&coded, camera, [0.5; 3], FAR_DEPTH);
    let mut normals = out.color.map(|c| 2.0 * c - 1.0);
    let valid: Vec<bool> = (0..normals.len_pixels()).map(|i| out.depth.is_valid_index(i)).collect();
    for (i, &ok) in valid.iter().enumerate() {
        let n = Vec3::from(normals.rgb(i));
        let n = if ok { n.try_normalize(0.0).unwrap_or_else(Vec3::zeros) } else { Vec3::zeros() };
        normals.set_rgb(i, n.into());
    }
    normals.set_validity(Some(valid));
    normals
}

/// Affine map of valid depths onto `[0, 1]`.
pub fn normalize_depth(depth: &ImageBuffer) -> Result<ImageBuffer> {
    let vals: Vec<f64> = (0..depth.len_pixels())
        .filter(|&i| depth.is_valid_index(i))
        .map(|i| depth.data()[i])
        .collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateInput("depth has no spread to normalize".into()));
    }
    Ok(depth.map(|d| (d - lo) / (hi - lo)))
}

/// A generated ground-truth case.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub seed: u64,
    pub camera: PinholeCamera,
    pub scene: Scene,
    pub kinds: Vec<PrimitiveKind>,
    pub image: ImageBuffer,
    pub masks: Vec<ImageBuffer>,
    /// Metric depth, valid wherever a surface is hit.
    pub depth: ImageBuffer,
    pub normals: ImageBuffer,
    pub caption: String,
    pub perturbation: Perturbation,
}

pub fn synthesize(seed: u64, config: &SynthConfig) -> Result<Synthetic> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = default_camera(config.width, config.height)?;
    let (w, h) = (config.width as f64, config.height as f64);

    // Back plane through (0, 0, plane_depth), spanned by x and the tilted y
    // axis, sized to cover the view with a margin.
    let tilt = config.plane_tilt_deg.to_radians();
    let origin = Vec3::new(0.0, 0.0, config.plane_depth);
    let (eu, ev) = (Vec3::x(), Vec3::new(0.0, tilt.cos(), tilt.sin()));
    let normal = eu.cross(&ev);
    let (mut s0, mut s1, mut t0, mut t1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (u, v) in [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
        let d = camera.unproject_camera(u, v, 1.0);
        let p = d * (normal.dot(&origin) / normal.dot(&d));
        let (s, t) = ((p - origin).dot(&eu), (p - origin).dot(&ev));
        (s0, s1, t0, t1) = (s0.min(s), s1.max(s), t0.min(t), t1.max(t));
    }
    let (ms, mt) = (0.1 * (s1 - s0), 0.1 * (t1 - t0));
    let (s0, s1, t0, t1) = (s0 - ms, s1 + ms, t0 - mt, t1 + mt);
    let phase: [f64; 3] = [0; 3].map(|_| rng.gen_range(0.0..2.0 * PI));
    let hue_bg = rng.gen_range(0.0..1.0);
    let bg_base = hsv(hue_bg, 0.25, 0.6);
    let background = grid(
        origin + eu * s0 + ev * t0,
        eu * (s1 - s0),
        ev * (t1 - t0),
        config.plane_grid,
        config.plane_grid,
        |s, t| {
            let wave = [
                (2.0 * PI * 2.0 * s + phase[0]).sin(),
                (2.0 * PI * 3.0 * t + phase[1]).sin(),
                (2.0 * PI * 2.0 * (s + t) + phase[2]).sin(),
            ];
            [0, 1, 2].map(|k| (bg_base[k] + 0.12 * wave[k]).clamp(0.0, 1.0))
        },
    );

    let n_target = rng.gen_range(config.min_objects..=config.max_objects);
    let mut discs: Vec<Disc> = Vec::new();
    let mut objects = Vec::new();
    let mut kinds = Vec::new();
    let mut hues = Vec::new();
    let mut attempts = 0;
    while objects.len() < n_target && attempts < 2000 {
        attempts += 1;
        let kind = [PrimitiveKind::Cube, PrimitiveKind::Sphere, PrimitiveKind::ExtrudedBox][rng.gen_range(0..3)];
        let hue = rng.gen_range(0.0..1.0);
        let base = hsv(hue, 0.5, 0.7);
        let mesh = primitive_mesh(kind, base, rng.gen_range(6.0..14.0))?;
        let size = rng.gen_range(config.object_size[0]..=config.object_size[1]);
        let z = rng.gen_range(config.object_depth[0]..=config.object_depth[1]);
        let radius = size * mesh.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let r_px = camera.focal * radius / (z - radius) + 2.0;
        if 2.0 * r_px >= w.min(h) {
            continue;
        }
        let u = rng.gen_range(r_px..w - r_px);
        let v = rng.gen_range(r_px..h - r_px);
        if discs.iter().any(|d| (d.u - u).hypot(d.v - v) < d.r + r_px) {
            continue;
        }
        let rotation = na::UnitQuaternion::from_euler_angles(
            rng.gen_range(-0.25..0.25),
            rng.gen_range(-0.45..0.45),
            rng.gen_range(-0.7..0.7),
        );
        let affine = AffineParams {
            translation: camera.unproject(u, v, z)?,
            rotation,
            log_scale: Vec3::repeat(size.ln()),
        };
        discs.push(Disc { u, v, r: r_px });
        objects.push(SceneObject { affine, mesh });
        kinds.push(kind);
        hues.push(hue);
    }
    if objects.len() < config.min_objects {
        return Err(Error::DegenerateInput(format!(
            "could only place {} of {} objects",
            objects.len(),
            config.min_objects
        )));
    }

    let scene = Scene { objects, background };
    let render = rasterize_hard(&scene, &camera, BACKGROUND_GREY, FAR_DEPTH);
    for (i, m) in render.object_masks.iter().enumerate() {
        if m.count_on() == 0 {
            return Err(Error::DegenerateInput(format!("object {i} is not visible")));
        }
    }
    let normals = render_normals(&scene, &camera);
    let mut names: Vec<String> = kinds
        .iter()
        .zip(&hues)
        .map(|(k, &h)| format!("a {} {}", hue_name(h), k.noun()))
        .collect();
    let caption = match names.len() {
        1 => format!("{} in front of a patterned wall", names[0]),
        _ => {
            let last = names.pop().expect("two or more names");
            format!("{} and {last} in front of a patterned wall", names.join(", "))
        }
    };
    let perturbation = Perturbation::sample(&mut rng, &scene, &camera, &config.perturbation)?;
    Ok(Synthetic {
        seed,
        camera,
        image: render.color,
        masks: render.object_masks,
        depth: render.depth,
        normals,
        caption,
        perturbation,
        scene,
        kinds,
    })
}

/// Metadata written next to a generated case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthInfo {
    pub seed: u64,
    pub config: SynthConfig,
    pub kinds: Vec<PrimitiveKind>,
    pub caption: String,
}

pub const SCENE_DIR: &str = "scene";
pub const ORACLE_DIR: &str = "oracle";
pub const PERTURBATION_FILE: &str = "perturbation.json";
pub const PROVIDERS_FILE: &str = "providers.json";
pub const INFO_FILE: &str = "synth.json";
pub const GT_DIR: &str = "gt";
/// Ground-truth views: the input pose plus seven spiral poses.
pub const GT_VIEWS: usize = 8;

impl Synthetic {
    pub fn bundle(&self) -> Result<SceneBundle> {
        Ok(SceneBundle::new(self.camera, &self.image, &self.scene, &self.masks)?
            .with_depth(&self.depth)?
            .with_caption(self.caption.clone()))
    }

    pub fn perturbed_scene(&self) -> Result<Scene> {
        self.perturbation.apply(&self.scene)
    }

    /// Background alone, as an ideal inpainter would return it.
    pub fn background_only(&self) -> Scene {
        Scene {
            objects: Vec::new(),
            background: self.scene.background.clone(),
        }
    }

    /// Object mesh as an ideal single-view reconstructor would return it:
    /// rotated and scaled into the view, then normalized.
    pub fn oracle_mesh(&self, i: usize) -> Result<TriangleMesh> {
        let o = &self.scene.objects[i];
        let posed = AffineParams {
            translation: Vec3::zeros(),
            ..o.affine
        };
        normalize_mesh(&crate::scene::apply_affine(&posed, &o.mesh))
    }

    /// Provider configuration answering every kind from the oracle directory,
    /// with an identity critic.
    pub fn providers_config() -> ProvidersConfig {
        let oracle = || ProviderSpec::mock(MockSpec::Oracle { dir: ORACLE_DIR.into() });
        let mut cfg = ProvidersConfig::default();
        for kind in [
            ProviderKind::Segmenter,
            ProviderKind::ObjectRecon,
            ProviderKind::DepthNormal,
            ProviderKind::Inpaint,
            ProviderKind::Captioner,
        ] {
            cfg = cfg.with(kind, oracle());
        }
        cfg.with(ProviderKind::Critic, ProviderSpec::mock(MockSpec::CriticIdentity))
    }

    /// Writes the ground-truth bundle, inputs, oracle data, perturbation and
    /// provider configuration under `dir`.
    pub fn write(&self, dir: &Path, config: &SynthConfig) -> Result<()> {
        use oracle_files as f;
        self.bundle()?.save(&dir.join(SCENE_DIR))?;
        std::fs::create_dir_all(dir.join("masks"))?;
        write_png(&dir.join("image.png"), &self.image)?;
        for (i, m) in self.masks.iter().enumerate() {
            write_png_mask(&dir.join("masks").join(format!("{}.png", object_stem(i))), m)?;
        }
        write_pfm(&dir.join("depth.pfm"), &self.depth)?;
        write_pfm(&dir.join("normal.pfm"), &self.normals)?;

        let oracle = dir.join(ORACLE_DIR);
        for sub in [f::CROPS, f::MESHES, f::MASKS] {
            std::fs::create_dir_all(oracle.join(sub))?;
        }
        std::fs::write(oracle.join(f::IMAGE), encode_png(&self.image)?)?;
        std::fs::write(oracle.join(f::DEPTH), encode_pfm(&normalize_depth(&self.depth)?)?)?;
        std::fs::write(oracle.join(f::NORMAL), encode_pfm(&self.normals)?)?;
        let bg = self.background_only();
        let bg_render = rasterize_hard(&bg, &self.camera, BACKGROUND_GREY, FAR_DEPTH);
        std::fs::write(oracle.join(f::BACKGROUND), encode_png(&bg_render.color)?)?;
        std::fs::write(oracle.join(f::BACKGROUND_DEPTH), encode_pfm(&normalize_depth(&bg_render.depth)?)?)?;
        std::fs::write(oracle.join(f::BACKGROUND_NORMAL), encode_pfm(&render_normals(&bg, &self.camera))?)?;
        std::fs::write(oracle.join(f::CAPTION), format!("{}\n", self.caption))?;
        // Crops are cut from the 8-bit image, as the lifter sees it.
        let image8 = crate::formats::quantize(&self.image);
        for (i, m) in self.masks.iter().enumerate() {
            let crop = crop_and_center(&image8, m)?;
            std::fs::write(oracle.join(f::CROPS).join(f::object_file(i, "png")), encode_png(&crop.image)?)?;
            std::fs::write(oracle.join(f::MESHES).join(f::object_file(i, "ply")), encode_ply(&self.oracle_mesh(i)?))?;
            write_png_mask(&oracle.join(f::MASKS).join(f::object_file(i, "png")), m)?;
        }

        let bounds = self
            .scene
            .bounds()
            .ok_or_else(|| Error::InvalidArgument("scene has no vertices".into()))?;
        let views = spiral_trajectory(&self.camera, &bounds, GT_VIEWS)?;
        let ids: Vec<usize> = (0..self.scene.objects.len()).collect();
        GroundTruth::write(&dir.join(GT_DIR), &self.scene, &ids, &views)?;

        std::fs::write(dir.join(PERTURBATION_FILE), json(&self.perturbation)?)?;
        std::fs::write(dir.join(PROVIDERS_FILE), json(&Self::providers_config())?)?;
        let info = SynthInfo {
            seed: self.seed,
            config: config.clone(),
            kinds: self.kinds.clone(),
            caption: self.caption.clone(),
        };
        std::fs::write(dir.join(INFO_FILE), json(&info)?)?;
        Ok(())
    }
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub fn read_perturbation(path: &Path) -> Result<Perturbation> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        let g = hsv(1.0 / 3.0, 1.0, 1.0);
        assert!((g[1] - 1.0).abs() < 1e-12 && g[0].abs() < 1e-12);
        assert_eq!(hue_name(0.62), "blue");
    }

    #[test]
    fn masks_are_disjoint_and_cover_the_objects() {
        let cfg = SynthConfig {
            width: 48,
            height: 48,
            ..SynthConfig::default()
        };
        let s = synthesize(3, &cfg).unwrap();
        let mut owners = vec![0; 48 * 48];
        for m in &s.masks {
            for (o, b) in owners.iter_mut().zip(m.mask_bits()) {
                *o += b as usize;
            }
        }
        assert!(owners.iter().all(|&o| o <= 1));
        assert_eq!(s.depth.valid_count(), 48 * 48);
    }
}
