//! End-to-end orchestration: reconstruct a bundle from an image and masks,
//! refine an existing bundle, render frames and evaluate against ground truth.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::background::{build_background, BackgroundConfig};
use crate::bundle::{object_stem, CameraRecord, SceneBundle, MAX_OBJECTS};
use crate::depth::{recover_scale_shift, ScaleShiftConfig, ScaleShiftFit};
use crate::error::{Error, Result};
use crate::formats::{read_png_mask, read_png_rgb, read_ply, write_pfm, write_png, write_ply};
use crate::image::ImageBuffer;
use crate::lifter::lift_object;
use crate::metrics::{geometry_metrics, psnr, ssim_default, SURFACE_SAMPLES};
use crate::providers::{ProviderError, ProviderSet};
use crate::raster::{rasterize_hard, RenderOutput};
use crate::refine::{write_history_csv, LossRecord, RefineConfig, RefineOutcome, RefineTargets, Refiner};
use crate::scene::{apply_affine, spiral_trajectory, PinholeCamera, Scene, SceneObject};
use crate::synth::{BACKGROUND_GREY, FAR_DEPTH};

pub const GROUND_TRUTH_VERSION: u32 = 1;
pub const LOSS_FILE: &str = "loss.csv";
pub const POSES_FILE: &str = "poses.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub depth: ScaleShiftConfig,
    pub background: BackgroundConfig,
    pub refine: RefineConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.refine.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}

/// Reads every `obj_XX.png` in `dir`, sorted by id. Other files are ignored.
pub fn read_mask_dir(dir: &Path) -> Result<Vec<(usize, ImageBuffer)>> {
    if !dir.is_dir() {
        return Err(Error::MissingFiles(vec![dir.to_path_buf()]));
    }
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let id = name
            .strip_prefix("obj_")
            .and_then(|r| r.strip_suffix(".png"))
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|d| d.parse::<usize>().ok());
        if let Some(id) = id {
            found.push((id, path));
        }
    }
    found.sort();
    for w in found.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::Validation(format!(
                "{} and {} name the same object",
                w[0].1.display(),
                w[1].1.display()
            )));
        }
    }
    found.into_iter().map(|(id, p)| Ok((id, read_png_mask(&p)?))).collect()
}

/// At least one mask, all sized like the image, none empty and no two
/// sharing a pixel.
pub fn check_masks(image: &ImageBuffer, masks: &[(usize, ImageBuffer)]) -> Result<()> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("at least one object mask is required".into()));
    }
    if masks.len() > MAX_OBJECTS {
        return Err(Error::InvalidArgument(format!(
            "{} masks; at most {MAX_OBJECTS} objects are supported",
            masks.len()
        )));
    }
    let bits: Vec<Vec<bool>> = masks.iter().map(|(_, m)| m.mask_bits()).collect();
    for ((id, m), b) in masks.iter().zip(&bits) {
        image.ensure_same_size(m, "object mask")?;
        if !b.iter().any(|&v| v) {
            return Err(Error::Validation(format!("mask {} is empty", object_stem(*id))));
        }
    }
    let mut overlaps = Vec::new();
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            let n = bits[i].iter().zip(&bits[j]).filter(|(a, b)| **a && **b).count();
            if n > 0 {
                overlaps.push(format!("{} and {} ({n} px)", object_stem(masks[i].0), object_stem(masks[j].0)));
            }
        }
    }
    if !overlaps.is_empty() {
        return Err(Error::Validation(format!("masks overlap: {}", overlaps.join(", "))));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub bundle: SceneBundle,
    /// The assembled scene before refinement.
    pub coarse: Scene,
    pub fit: ScaleShiftFit,
    /// Empty when refinement was skipped.
    pub history: Vec<LossRecord>,
    pub critic_calls: usize,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn caption_or_empty(image: &ImageBuffer, providers: &mut dyn ProviderSet) -> Result<String> {
    match providers.caption(image) {
        Ok(c) => Ok(c),
        Err(ProviderError::NotConfigured { .. }) => {
            log::warn!("no caption provider configured; the critic gets an empty prompt");
            Ok(String::new())
        }
        Err(e) => Err(e.into()),
    }
}

/// Runs the full pipeline. Intermediate products of every finished stage go
/// to `artifacts` when given, so a failing run leaves them for inspection.
pub fn reconstruct(
    image: &ImageBuffer,
    masks: &[(usize, ImageBuffer)],
    camera: &PinholeCamera,
    providers: &mut dyn ProviderSet,
    config: &PipelineConfig,
    skip_refine: bool,
    artifacts: Option<&Path>,
) -> Result<Reconstruction> {
    if image.width() != camera.width || image.height() != camera.height {
        return Err(Error::InvalidArgument("image size does not match the camera".into()));
    }
    check_masks(image, masks)?;
    config.refine.validate()?;
    if let Some(dir) = artifacts {
        std::fs::create_dir_all(dir)?;
    }
    let save = |f: &dyn Fn(&Path) -> Result<()>| match artifacts {
        Some(dir) => f(dir),
        None => Ok(()),
    };

    let estimate = stage("depth", providers.depth_normal(image).map_err(Error::from))?;
    save(&|d| {
        write_pfm(&d.join("depth_normalized.pfm"), &estimate.depth)?;
        write_pfm(&d.join("normal.pfm"), &estimate.normal)
    })?;

    let fit = stage("scale_shift", recover_scale_shift(&estimate.depth, &estimate.normal, camera, &config.depth))?;
    let metric = fit.affine.apply(&estimate.depth);
    log::info!(
        "depth: scale {:.4} shift {:.4} (t/s {:.4})",
        fit.affine.scale,
        fit.affine.shift,
        fit.ratio
    );
    save(&|d| write_pfm(&d.join("depth_metric.pfm"), &metric))?;

    let mut objects = Vec::with_capacity(masks.len());
    for (id, mask) in masks {
        let rec = stage("lift", lift_object(*id, image, mask, camera, &metric, providers))?;
        save(&|d| {
            std::fs::create_dir_all(d.join("coarse_meshes"))?;
            let placed = apply_affine(&rec.affine, &rec.mesh);
            write_ply(&d.join("coarse_meshes").join(format!("{}.ply", object_stem(*id))), &placed)
        })?;
        objects.push(SceneObject {
            affine: rec.affine,
            mesh: rec.mesh,
        });
    }

    let object_masks: Vec<ImageBuffer> = masks.iter().map(|(_, m)| m.clone()).collect();
    let bg = stage(
        "background",
        build_background(image, &object_masks, camera, &metric, providers, &config.background),
    )?;
    save(&|d| {
        write_png(&d.join("inpainted.png"), &bg.inpainted)?;
        write_pfm(&d.join("background_depth.pfm"), &bg.depth)?;
        write_ply(&d.join("background.ply"), &bg.mesh)
    })?;

    let caption = stage("caption", caption_or_empty(image, providers))?;
    let coarse = Scene {
        objects,
        background: bg.mesh,
    };
    let mut bundle = SceneBundle::new(*camera, image, &coarse, &object_masks)?
        .with_depth(&metric)?
        .with_caption(caption);
    for (o, (id, _)) in bundle.objects.iter_mut().zip(masks) {
        o.id = *id;
    }
    save(&|d| bundle.save(&d.join("coarse")))?;
    if skip_refine {
        return Ok(Reconstruction {
            bundle,
            coarse,
            fit,
            history: Vec::new(),
            critic_calls: 0,
        });
    }

    let outcome = stage("refine", refine_bundle_scene(&bundle, providers, &config.refine, artifacts))?;
    bundle.set_scene(&outcome.scene)?;
    Ok(Reconstruction {
        bundle,
        coarse,
        fit,
        history: outcome.history,
        critic_calls: outcome.critic_calls,
    })
}

/// Input-view targets stored in a bundle: image, masks and metric depth.
pub fn bundle_targets(bundle: &SceneBundle) -> Result<RefineTargets> {
    let depth = bundle
        .depth
        .clone()
        .ok_or_else(|| Error::Validation("bundle has no depth map to refine against".into()))?;
    Ok(RefineTargets {
        image: bundle.image.clone(),
        masks: bundle.masks(),
        depth,
    })
}

fn refine_bundle_scene(
    bundle: &SceneBundle,
    providers: &mut dyn ProviderSet,
    config: &RefineConfig,
    artifacts: Option<&Path>,
) -> Result<RefineOutcome> {
    let targets = bundle_targets(bundle)?;
    let caption = bundle.caption.clone().unwrap_or_default();
    let refiner = Refiner::new(bundle.scene(), bundle.camera, targets, caption, config.clone())?;
    match refiner.run(providers) {
        Ok(outcome) => Ok(outcome),
        Err((e, partial)) => {
            if let Some(dir) = artifacts {
                let mut b = bundle.clone();
                let saved = b
                    .set_scene(partial.scene())
                    .and_then(|_| b.save(&dir.join("partial")))
                    .and_then(|_| write_history_csv(&dir.join("partial").join(LOSS_FILE), partial.history()));
                if let Err(se) = saved {
                    log::warn!("could not save the partial refinement: {se}");
                }
            }
            Err(e)
        }
    }
}

/// Refines an existing bundle and returns the updated copy.
pub fn refine_bundle(
    bundle: &SceneBundle,
    providers: &mut dyn ProviderSet,
    config: &RefineConfig,
    artifacts: Option<&Path>,
) -> Result<(SceneBundle, RefineOutcome)> {
    let outcome = refine_bundle_scene(bundle, providers, config, artifacts)?;
    let mut out = bundle.clone();
    out.set_scene(&outcome.scene)?;
    Ok((out, outcome))
}

/// Hard render with the grey background used throughout the pipeline.
pub fn render_view(scene: &Scene, camera: &PinholeCamera) -> RenderOutput {
    rasterize_hard(scene, camera, BACKGROUND_GREY, FAR_DEPTH)
}

/// The bundle's input pose followed by `n - 1` further spiral poses.
pub fn spiral_poses(bundle: &SceneBundle, n: usize) -> Result<Vec<PinholeCamera>> {
    let bounds = bundle
        .scene()
        .bounds()
        .ok_or_else(|| Error::Validation("scene has no vertices".into()))?;
    spiral_trajectory(&bundle.camera, &bounds, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub image: String,
    pub camera: CameraRecord,
    pub center: [f64; 3],
}

/// Renders `poses` to `frame_XXX.png` in `dir` and logs the cameras in
/// `poses.json`.
pub fn write_frames(dir: &Path, scene: &Scene, poses: &[PinholeCamera]) -> Result<Vec<FrameRecord>> {
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(poses.len());
    for (i, cam) in poses.iter().enumerate() {
        let name = format!("frame_{i:03}.png");
        write_png(&dir.join(&name), &render_view(scene, cam).color)?;
        records.push(FrameRecord {
            image: name,
            camera: CameraRecord::from(cam),
            center: cam.center().into(),
        });
    }
    std::fs::write(dir.join(POSES_FILE), serde_json::to_string_pretty(&records)? + "\n")?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtView {
    pub image: String,
    pub camera: CameraRecord,
}

/// A ground-truth mesh in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtObject {
    pub id: usize,
    pub mesh: String,
}

/// `gt.json`: reference views and meshes, paths relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub version: u32,
    #[serde(default)]
    pub views: Vec<GtView>,
    #[serde(default)]
    pub objects: Vec<GtObject>,
}

impl GroundTruth {
    pub fn parse(text: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(text).map_err(|e| Error::format("ground truth", e.to_string()))?;
        if g.version != GROUND_TRUTH_VERSION {
            return Err(Error::format("ground truth", format!("unsupported version {}", g.version)));
        }
        if g.views.is_empty() && g.objects.is_empty() {
            return Err(Error::Validation("ground truth lists no views and no meshes".into()));
        }
        for p in g.files() {
            crate::providers::protocol::check_relative(p).map_err(|m| Error::format("ground truth", m))?;
        }
        Ok(g)
    }

    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.views
            .iter()
            .map(|v| v.image.as_str())
            .chain(self.objects.iter().map(|o| o.mesh.as_str()))
    }

    /// Parses `path` and checks that every referenced file exists, listing
    /// all absent ones.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFiles(vec![path.to_path_buf()]));
        }
        let g = Self::parse(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let missing: Vec<PathBuf> = g.files().map(|f| base.join(f)).filter(|p| !p.is_file()).collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        Ok(g)
    }

    /// Renders `views` of `scene` and stores its placed object meshes under
    /// `dir`, then writes `dir/gt.json`.
    pub fn write(dir: &Path, scene: &Scene, ids: &[usize], views: &[PinholeCamera]) -> Result<Self> {
        std::fs::create_dir_all(dir.join("views"))?;
        std::fs::create_dir_all(dir.join("meshes"))?;
        let mut gt = GroundTruth {
            version: GROUND_TRUTH_VERSION,
            views: Vec::new(),
            objects: Vec::new(),
        };
        for (i, cam) in views.iter().enumerate() {
            let image = format!("views/view_{i:03}.png");
            write_png(&dir.join(&image), &render_view(scene, cam).color)?;
            gt.views.push(GtView {
                image,
                camera: CameraRecord::from(cam),
            });
        }
        for (o, &id) in scene.objects.iter().zip(ids) {
            let mesh = format!("meshes/{}.ply", object_stem(id));
            write_ply(&dir.join(&mesh), &apply_affine(&o.affine, &o.mesh))?;
            gt.objects.push(GtObject { id, mesh });
        }
        std::fs::write(dir.join(GT_FILE), serde_json::to_string_pretty(&gt)? + "\n")?;
        Ok(gt)
    }
}

pub const GT_FILE: &str = "gt.json";

/// JSON numbers cannot hold infinities; they travel as `"inf"`/`"-inf"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("unexpected number `{t}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub image: String,
    #[serde(with = "extended_f64")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub id: usize,
    pub chamfer: f64,
    pub f_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewScore>,
    pub objects: Vec<ObjectScore>,
    #[serde(with = "extended_f64")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_chamfer: f64,
    pub mean_f_score: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.views {
            out += &format!("view {:<24} psnr {:>8.3}  ssim {:.4}\n", v.image, v.psnr, v.ssim);
        }
        for o in &self.objects {
            out += &format!("object {:<3} chamfer {:.6}  f-score {:.2}\n", o.id, o.chamfer, o.f_score);
        }
        if !self.views.is_empty() {
            out += &format!("mean psnr {:.3}  ssim {:.4}\n", self.mean_psnr, self.mean_ssim);
        }
        if !self.objects.is_empty() {
            out += &format!("mean chamfer {:.6}  f-score {:.2}\n", self.mean_chamfer, self.mean_f_score);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: SURFACE_SAMPLES,
            seed: 0,
        }
    }
}

/// Image metrics over the ground-truth views and geometry metrics for every
/// ground-truth object. `gt_dir` is where the ground truth's paths start.
pub fn evaluate(bundle: &SceneBundle, gt: &GroundTruth, gt_dir: &Path, config: &EvalConfig) -> Result<EvalReport> {
    let scene = bundle.scene();
    let mut views = Vec::with_capacity(gt.views.len());
    for v in &gt.views {
        let cam = v.camera.to_camera()?;
        let reference = read_png_rgb(&gt_dir.join(&v.image))?;
        if reference.width() != cam.width || reference.height() != cam.height {
            return Err(Error::Validation(format!("{} does not match its camera size", v.image)));
        }
        let render = crate::formats::quantize(&render_view(&scene, &cam).color);
        views.push(ViewScore {
            image: v.image.clone(),
            psnr: psnr(&render, &reference)?,
            ssim: ssim_default(&render, &reference)?,
        });
    }
    let mut seen = BTreeSet::new();
    let mut objects = Vec::with_capacity(gt.objects.len());
    for g in &gt.objects {
        if !seen.insert(g.id) {
            return Err(Error::Validation(format!("ground truth lists object {} twice", g.id)));
        }
        let idx = bundle
            .object_index(g.id)
            .ok_or_else(|| Error::Validation(format!("scene has no object {}", g.id)))?;
        let o = &bundle.objects[idx];
        let truth = read_ply(&gt_dir.join(&g.mesh))?;
        let score = geometry_metrics(&apply_affine(&o.affine, &o.mesh), &truth, config.samples, config.seed)?;
        objects.push(ObjectScore {
            id: g.id,
            chamfer: score.chamfer,
            f_score: score.f_score,
        });
    }
    Ok(EvalReport {
        mean_psnr: mean(views.iter().map(|v| v.psnr)),
        mean_ssim: mean(views.iter().map(|v| v.ssim)),
        mean_chamfer: mean(objects.iter().map(|o| o.chamfer)),
        mean_f_score: mean(objects.iter().map(|o| o.f_score)),
        views,
        objects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_psnr_survives_json() {
        let v = ViewScore {
            image: "a.png".into(),
            psnr: f64::INFINITY,
            ssim: 1.0,
        };
        let text = serde_json::to_string(&v).unwrap();
        assert!(text.contains("\"inf\""), "{text}");
        assert_eq!(serde_json::from_str::<ViewScore>(&text).unwrap(), v);
    }

    #[test]
    fn overlapping_masks_are_named() {
        let image = ImageBuffer::new(4, 4, 3);
        let mut a = ImageBuffer::new(4, 4, 1);
        let mut b = ImageBuffer::new(4, 4, 1);
        a.data_mut()[5] = 1.0;
        b.data_mut()[5] = 1.0;
        b.data_mut()[6] = 1.0;
        let err = check_masks(&image, &[(3, a), (7, b)]).unwrap_err().to_string();
        assert!(err.contains("obj_03") && err.contains("obj_07"), "{err}");
        assert!(matches!(check_masks(&image, &[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn config_sections_default() {
        let c = PipelineConfig::parse(r#"{"refine": {"iterations": 3}}"#).unwrap();
        assert_eq!(c.refine.iterations, 3);
        assert_eq!(c.background, BackgroundConfig::default());
        assert!(PipelineConfig::parse(r#"{"refine": {"iters": 3}}"#).is_err());
    }
}
