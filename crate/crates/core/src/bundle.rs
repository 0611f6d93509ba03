//! Scene bundles on disk: a JSON manifest next to PLY meshes, PNG masks, the
//! source image and optional metric depth.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra as na;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{quantize, read_pfm, read_ply, read_png_mask, read_png_rgb, write_pfm, write_ply, write_png, write_png_mask};
use crate::image::ImageBuffer;
use crate::providers::protocol::check_relative;
use crate::scene::{AffineParams, Mat3, PinholeCamera, Scene, SceneObject, TriangleMesh, Vec3};

pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MAX_OBJECTS: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub width: usize,
    pub height: usize,
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&PinholeCamera> for CameraRecord {
    fn from(c: &PinholeCamera) -> Self {
        Self {
            focal: c.focal,
            principal_point: [c.principal_point.0, c.principal_point.1],
            width: c.width,
            height: c.height,
            rotation: [0, 1, 2].map(|r| [0, 1, 2].map(|k| c.rotation[(r, k)])),
            translation: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<PinholeCamera> {
        let rotation = Mat3::from_fn(|r, k| self.rotation[r][k]);
        PinholeCamera::new(
            self.focal,
            (self.principal_point[0], self.principal_point[1]),
            self.width,
            self.height,
            rotation,
            Vec3::from(self.translation),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineRecord {
    pub translation: [f64; 3],
    /// Unit quaternion as `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
}

impl From<&AffineParams> for AffineRecord {
    fn from(a: &AffineParams) -> Self {
        let q = a.rotation.quaternion();
        Self {
            translation: a.translation.into(),
            rotation: [q.w, q.i, q.j, q.k],
            log_scale: a.log_scale.into(),
        }
    }
}

impl AffineRecord {
    pub fn to_affine(&self) -> Result<AffineParams> {
        let [w, x, y, z] = self.rotation;
        // Stored components are kept verbatim; only the norm is checked.
        let a = AffineParams {
            translation: Vec3::from(self.translation),
            rotation: na::UnitQuaternion::new_unchecked(na::Quaternion::new(w, x, y, z)),
            log_scale: Vec3::from(self.log_scale),
        };
        a.validate()?;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub id: usize,
    pub mask: String,
    pub mesh: String,
    pub affine: AffineRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub camera: CameraRecord,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    pub background: String,
    pub objects: Vec<ObjectEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::format("manifest", e.to_string()))?;
        if m.version != BUNDLE_VERSION {
            return Err(Error::format(
                "manifest",
                format!("unsupported version {}, expected {BUNDLE_VERSION}", m.version),
            ));
        }
        for p in m.files() {
            check_relative(p).map_err(|e| Error::format("manifest", e))?;
        }
        let mut ids = BTreeSet::new();
        for o in &m.objects {
            if !ids.insert(o.id) {
                return Err(Error::format("manifest", format!("duplicate object id {}", o.id)));
            }
        }
        if m.objects.len() > MAX_OBJECTS {
            return Err(Error::format(
                "manifest",
                format!("{} objects; at most {MAX_OBJECTS} are supported", m.objects.len()),
            ));
        }
        Ok(m)
    }

    /// Every file the manifest references.
    pub fn files(&self) -> impl Iterator<Item = &str> {
        [self.image.as_str(), self.background.as_str()]
            .into_iter()
            .chain(self.depth.as_deref())
            .chain(self.objects.iter().flat_map(|o| [o.mask.as_str(), o.mesh.as_str()]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleObject {
    pub id: usize,
    pub mask: ImageBuffer,
    pub mesh: TriangleMesh,
    pub affine: AffineParams,
}

/// In-memory scene bundle. Stored pixels are normalized to what the files can
/// hold (8-bit image, binary masks, f32 depth with validity), so saving and
/// loading reproduces every field exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub camera: PinholeCamera,
    pub image: ImageBuffer,
    pub depth: Option<ImageBuffer>,
    pub caption: Option<String>,
    pub background: TriangleMesh,
    pub objects: Vec<BundleObject>,
}

pub fn object_stem(id: usize) -> String {
    format!("obj_{id:02}")
}

fn normalize_depth(depth: &ImageBuffer) -> ImageBuffer {
    let mut d = depth.map(|v| v as f32 as f64);
    let validity = (0..d.len_pixels()).map(|i| depth.is_valid_index(i) && d.data()[i].is_finite()).collect();
    d.set_validity(Some(validity));
    d
}

impl SceneBundle {
    pub fn new(camera: PinholeCamera, image: &ImageBuffer, scene: &Scene, masks: &[ImageBuffer]) -> Result<Self> {
        if masks.len() != scene.objects.len() {
            return Err(Error::InvalidArgument(format!(
                "{} masks for {} objects",
                masks.len(),
                scene.objects.len()
            )));
        }
        let objects = scene
            .objects
            .iter()
            .zip(masks)
            .enumerate()
            .map(|(id, (o, m))| BundleObject {
                id,
                mask: ImageBuffer::from_mask_bits(m.width(), m.height(), &m.mask_bits()),
                mesh: o.mesh.clone(),
                affine: o.affine,
            })
            .collect();
        let b = Self {
            camera,
            image: quantize(image),
            depth: None,
            caption: None,
            background: scene.background.clone(),
            objects,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_depth(mut self, depth: &ImageBuffer) -> Result<Self> {
        self.image.ensure_same_size(depth, "depth")?;
        self.depth = Some(normalize_depth(depth));
        Ok(self)
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.caption = Some(caption.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.image.width() != self.camera.width || self.image.height() != self.camera.height {
            return Err(Error::Validation("image size does not match the camera".into()));
        }
        if self.objects.len() > MAX_OBJECTS {
            return Err(Error::Validation(format!(
                "{} objects; at most {MAX_OBJECTS} are supported",
                self.objects.len()
            )));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(Error::Validation(format!("duplicate object id {}", o.id)));
            }
            o.affine.validate()?;
            o.mesh.validate()?;
            self.image.ensure_same_size(&o.mask, "object mask")?;
        }
        self.background.validate()?;
        Ok(())
    }

    pub fn scene(&self) -> Scene {
        Scene {
            objects: self
                .objects
                .iter()
                .map(|o| SceneObject {
                    affine: o.affine,
                    mesh: o.mesh.clone(),
                })
                .collect(),
            background: self.background.clone(),
        }
    }

    /// Replaces the object poses and meshes and the background with `scene`,
    /// which must have the same objects in the same order.
    pub fn set_scene(&mut self, scene: &Scene) -> Result<()> {
        if scene.objects.len() != self.objects.len() {
            return Err(Error::InvalidArgument("scene object count changed".into()));
        }
        for (o, s) in self.objects.iter_mut().zip(&scene.objects) {
            o.affine = s.affine;
            o.mesh = s.mesh.clone();
        }
        self.background = scene.background.clone();
        Ok(())
    }

    pub fn masks(&self) -> Vec<ImageBuffer> {
        self.objects.iter().map(|o| o.mask.clone()).collect()
    }

    pub fn object_index(&self, id: usize) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: BUNDLE_VERSION,
            camera: CameraRecord::from(&self.camera),
            image: "image.png".into(),
            depth: self.depth.as_ref().map(|_| "depth.pfm".into()),
            caption: self.caption.clone(),
            background: "background.ply".into(),
            objects: self
                .objects
                .iter()
                .map(|o| ObjectEntry {
                    id: o.id,
                    mask: format!("masks/{}.png", object_stem(o.id)),
                    mesh: format!("meshes/{}.ply", object_stem(o.id)),
                    affine: AffineRecord::from(&o.affine),
                })
                .collect(),
        }
    }

    /// Writes the bundle into `dir`, creating it; the manifest goes last.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        let m = self.manifest();
        std::fs::create_dir_all(dir.join("masks"))?;
        std::fs::create_dir_all(dir.join("meshes"))?;
        write_png(&dir.join(&m.image), &self.image)?;
        if let (Some(d), Some(p)) = (&self.depth, &m.depth) {
            write_pfm(&dir.join(p), d)?;
        }
        write_ply(&dir.join(&m.background), &self.background)?;
        for (o, e) in self.objects.iter().zip(&m.objects) {
            write_png_mask(&dir.join(&e.mask), &o.mask)?;
            write_ply(&dir.join(&e.mesh), &o.mesh)?;
        }
        let text = serde_json::to_string_pretty(&m)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(Error::MissingFiles(vec![manifest_path]));
        }
        let m = Manifest::parse(&std::fs::read_to_string(&manifest_path)?)?;
        let missing: Vec<PathBuf> = m.files().map(|f| dir.join(f)).filter(|p| !p.is_file()).collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        let camera = m.camera.to_camera()?;
        let image = read_png_rgb(&dir.join(&m.image))?;
        let depth = match &m.depth {
            Some(p) => {
                let d = read_pfm(&dir.join(p))?;
                if d.channels() != 1 {
                    return Err(Error::format("pfm", "bundle depth must have one channel"));
                }
                Some(d)
            }
            None => None,
        };
        let background = read_ply(&dir.join(&m.background))?;
        let mut objects = Vec::with_capacity(m.objects.len());
        for e in &m.objects {
            objects.push(BundleObject {
                id: e.id,
                mask: read_png_mask(&dir.join(&e.mask))?,
                mesh: read_ply(&dir.join(&e.mesh))?,
                affine: e.affine.to_affine()?,
            });
        }
        let b = Self {
            camera,
            image,
            depth,
            caption: m.caption,
            background,
            objects,
        };
        b.validate()?;
        Ok(b)
    }
}
