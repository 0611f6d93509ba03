//! Built-in deterministic providers.
//!
//! Mocks speak the same file protocol as external commands: [`serve`] reads
//! `request.json` from a work directory and writes outputs plus
//! `response.json` back into it. All file access goes through a
//! [`Sandbox`], and the access log is saved as `audit.json`.
//!
//! `oracle` mocks answer from a synthetic bundle's `oracle/` directory and
//! reproduce the generator's buffers byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::resolve;
use super::protocol::{parse_request, RequestManifest, ResponseManifest, REQUEST_FILE, RESPONSE_FILE};
use super::sandbox::Sandbox;
use super::ProviderKind;
use crate::formats::{decode_png_mask, decode_png_rgb, encode_pfm, encode_ply, encode_png};
use crate::image::ImageBuffer;
use crate::primitives;
use crate::scene::Vec3;

/// File names inside an oracle directory.
pub mod oracle_files {
    pub const IMAGE: &str = "image.png";
    pub const DEPTH: &str = "depth.pfm";
    pub const NORMAL: &str = "normal.pfm";
    pub const BACKGROUND: &str = "background.png";
    pub const BACKGROUND_DEPTH: &str = "background_depth.pfm";
    pub const BACKGROUND_NORMAL: &str = "background_normal.pfm";
    pub const CAPTION: &str = "caption.txt";
    pub const CROPS: &str = "crops";
    pub const MESHES: &str = "meshes";
    pub const MASKS: &str = "masks";

    pub fn object_file(id: usize, ext: &str) -> String {
        format!("obj_{id:02}.{ext}")
    }
}

/// Largest per-channel mean squared difference at which an oracle still
/// accepts an input image as one of its own.
const ORACLE_MATCH_MSE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MockSpec {
    /// Copies every input file to the output of the same name.
    Echo,
    /// Constant normalized depth with camera-facing normals.
    DepthConstant { depth: f64 },
    /// Returns the given PFM files unchanged.
    DepthField { depth: PathBuf, normal: PathBuf },
    InpaintIdentity,
    /// Replaces masked pixels with the mean color of the unmasked ones.
    InpaintMeanFill,
    ReconCube,
    ReconSphere,
    ReconPly { path: PathBuf },
    /// Returns every `*.png` in `dir`, sorted by name, as masks.
    SegmentDir { dir: PathBuf },
    CriticIdentity,
    CriticConstant { rgb: [f64; 3] },
    /// `(1 - alpha) * render + alpha * condition`.
    CriticBlend { alpha: f64 },
    Caption { text: String },
    /// Always answers with an error status.
    Fail { message: String },
    /// Sleeps, then fails. Exercises timeouts.
    Sleep { seconds: f64 },
    /// Serves ground truth from a synthetic bundle's oracle directory.
    Oracle { dir: PathBuf },
}

impl MockSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MockSpec::Echo => "echo",
            MockSpec::DepthConstant { .. } => "depth_constant",
            MockSpec::DepthField { .. } => "depth_field",
            MockSpec::InpaintIdentity => "inpaint_identity",
            MockSpec::InpaintMeanFill => "inpaint_mean_fill",
            MockSpec::ReconCube => "recon_cube",
            MockSpec::ReconSphere => "recon_sphere",
            MockSpec::ReconPly { .. } => "recon_ply",
            MockSpec::SegmentDir { .. } => "segment_dir",
            MockSpec::CriticIdentity => "critic_identity",
            MockSpec::CriticConstant { .. } => "critic_constant",
            MockSpec::CriticBlend { .. } => "critic_blend",
            MockSpec::Caption { .. } => "caption",
            MockSpec::Fail { .. } => "fail",
            MockSpec::Sleep { .. } => "sleep",
            MockSpec::Oracle { .. } => "oracle",
        }
    }

    fn serves(&self, kind: ProviderKind) -> bool {
        use ProviderKind as K;
        match self {
            MockSpec::Echo => kind == K::Echo,
            MockSpec::DepthConstant { .. } | MockSpec::DepthField { .. } => kind == K::DepthNormal,
            MockSpec::InpaintIdentity | MockSpec::InpaintMeanFill => kind == K::Inpaint,
            MockSpec::ReconCube | MockSpec::ReconSphere | MockSpec::ReconPly { .. } => kind == K::ObjectRecon,
            MockSpec::SegmentDir { .. } => kind == K::Segmenter,
            MockSpec::CriticIdentity | MockSpec::CriticConstant { .. } | MockSpec::CriticBlend { .. } => {
                kind == K::Critic
            }
            MockSpec::Caption { .. } => kind == K::Captioner,
            MockSpec::Fail { .. } | MockSpec::Sleep { .. } => true,
            MockSpec::Oracle { .. } => !matches!(kind, K::Critic | K::Echo),
        }
    }

    /// Checks that the mode fits `kind` and its parameters are usable. Paths
    /// are checked for existence, so resolve them first.
    pub fn validate(&self, kind: ProviderKind) -> Result<(), String> {
        if !self.serves(kind) {
            return Err(format!("mock `{}` cannot serve `{kind}`", self.name()));
        }
        let exists = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(format!("{what} {} not found", p.display()))
            }
        };
        match self {
            MockSpec::DepthConstant { depth } if !depth.is_finite() => Err("depth must be finite".into()),
            MockSpec::DepthField { depth, normal } => {
                exists(depth, "depth field")?;
                exists(normal, "normal field")
            }
            MockSpec::ReconPly { path } => exists(path, "mesh"),
            MockSpec::SegmentDir { dir } => exists(dir, "mask directory"),
            MockSpec::CriticConstant { rgb } if rgb.iter().any(|c| !(0.0..=1.0).contains(c)) => {
                Err("rgb must lie in [0, 1]".into())
            }
            MockSpec::CriticBlend { alpha } if !(0.0..=1.0).contains(alpha) => Err("alpha must lie in [0, 1]".into()),
            MockSpec::Sleep { seconds } if !(*seconds >= 0.0 && seconds.is_finite()) => {
                Err("seconds must be non-negative".into())
            }
            MockSpec::Oracle { dir } => exists(&dir.join(oracle_files::IMAGE), "oracle bundle"),
            _ => Ok(()),
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        match self {
            MockSpec::DepthField { depth, normal } => {
                resolve(base, depth);
                resolve(base, normal);
            }
            MockSpec::ReconPly { path } => resolve(base, path),
            MockSpec::SegmentDir { dir } | MockSpec::Oracle { dir } => resolve(base, dir),
            _ => {}
        }
    }

    fn resources(&self) -> Vec<&Path> {
        match self {
            MockSpec::DepthField { depth, normal } => vec![depth, normal],
            MockSpec::ReconPly { path } => vec![path],
            MockSpec::SegmentDir { dir } | MockSpec::Oracle { dir } => vec![dir],
            _ => vec![],
        }
    }
}

/// Answers the request in `workdir`. A failure to produce outputs becomes an
/// error response; only a failure to write `response.json` itself is
/// returned.
pub fn serve(spec: &MockSpec, workdir: &Path) -> std::io::Result<()> {
    let mut sb = Sandbox::new(workdir)?;
    for r in spec.resources() {
        sb.allow_resource(r);
    }
    let response = match answer(spec, &mut sb) {
        Ok(outputs) => ResponseManifest::ok(outputs),
        Err(message) => ResponseManifest::error(message),
    };
    sb.save_audit()?;
    let text = serde_json::to_string_pretty(&response).map_err(std::io::Error::other)?;
    std::fs::write(sb.root().join(RESPONSE_FILE), text)
}

type Outputs = BTreeMap<String, String>;

fn answer(spec: &MockSpec, sb: &mut Sandbox) -> Result<Outputs, String> {
    let req = parse_request(&sb.read_to_string(REQUEST_FILE)?)?;
    if !spec.serves(req.kind) {
        return Err(format!("mock `{}` cannot serve `{}`", spec.name(), req.kind));
    }
    let mut io = Io { sb, req: &req, out: Outputs::new() };
    match spec {
        MockSpec::Echo => {
            for (name, path) in &req.inputs {
                let bytes = io.sb.read(path)?;
                let dest = req.outputs.get(name).cloned().unwrap_or_else(|| format!("echo/{path}"));
                io.sb.write(&dest, &bytes)?;
                io.out.insert(name.clone(), dest);
            }
        }
        MockSpec::DepthConstant { depth } => {
            let img = io.image("image")?;
            let (w, h) = (img.width(), img.height());
            io.put("depth", &pfm(&ImageBuffer::filled(w, h, 1, *depth))?)?;
            io.put("normal", &pfm(&ImageBuffer::from_rgb(w, h, [0.0, 0.0, -1.0]))?)?;
        }
        MockSpec::DepthField { depth, normal } => {
            let img = io.image("image")?;
            let d = io.sb.read_resource(depth)?;
            let n = io.sb.read_resource(normal)?;
            for bytes in [&d, &n] {
                let f = crate::formats::parse_pfm(bytes).map_err(|e| e.to_string())?;
                if !f.same_size(&img) {
                    return Err(format!(
                        "field is {}x{} but the image is {}x{}",
                        f.width(),
                        f.height(),
                        img.width(),
                        img.height()
                    ));
                }
            }
            io.put("depth", &d)?;
            io.put("normal", &n)?;
        }
        MockSpec::InpaintIdentity => {
            let bytes = io.bytes("image")?;
            decode_png_rgb(&bytes).map_err(|e| e.to_string())?;
            io.put("image", &bytes)?;
        }
        MockSpec::InpaintMeanFill => {
            let mut img = io.image("image")?;
            let mask = decode_png_mask(&io.bytes("mask")?).map_err(|e| e.to_string())?;
            if !mask.same_size(&img) {
                return Err("mask and image differ in size".into());
            }
            let bits = mask.mask_bits();
            let mut sum = [0.0; 3];
            let mut n = 0.0;
            for (i, _) in bits.iter().enumerate().filter(|(_, on)| !**on) {
                let c = img.rgb(i);
                (0..3).for_each(|k| sum[k] += c[k]);
                n += 1.0;
            }
            let fill = if n > 0.0 { sum.map(|s| s / n) } else { [0.5; 3] };
            for (i, _) in bits.iter().enumerate().filter(|(_, on)| **on) {
                img.set_rgb(i, fill);
            }
            io.put("image", &png(&img)?)?;
        }
        MockSpec::ReconCube | MockSpec::ReconSphere => {
            let crop = io.image("image")?;
            let color = foreground_mean(&crop);
            let mesh = if matches!(spec, MockSpec::ReconCube) {
                primitives::cuboid(Vec3::new(1.0, 1.0, 1.0), 1, |_| color)
            } else {
                primitives::icosphere(0.5, 2, |_| color)
            };
            io.put("mesh", &encode_ply(&mesh))?;
        }
        MockSpec::ReconPly { path } => {
            io.image("image")?;
            let bytes = io.sb.read_resource(path)?;
            crate::formats::parse_ply(&bytes).map_err(|e| e.to_string())?;
            io.put("mesh", &bytes)?;
        }
        MockSpec::SegmentDir { dir } => {
            let img = io.image("image")?;
            for (i, path) in sorted_files(dir, "png")?.into_iter().enumerate() {
                let bytes = io.sb.read_resource(&path)?;
                let mask = decode_png_mask(&bytes).map_err(|e| e.to_string())?;
                if !mask.same_size(&img) {
                    return Err(format!("{} does not match the image size", path.display()));
                }
                io.put_dynamic(&format!("mask_{i:02}"), &format!("masks/mask_{i:02}.png"), &bytes)?;
            }
        }
        MockSpec::CriticIdentity | MockSpec::CriticConstant { .. } | MockSpec::CriticBlend { .. } => {
            let render = io.image("render")?;
            let condition = io.image("condition")?;
            io.bytes("prompt")?;
            let out = match spec {
                MockSpec::CriticIdentity => render,
                MockSpec::CriticConstant { rgb } => ImageBuffer::from_rgb(render.width(), render.height(), *rgb),
                MockSpec::CriticBlend { alpha } => {
                    if !condition.same_size(&render) {
                        return Err("condition and render differ in size".into());
                    }
                    let data = render
                        .data()
                        .iter()
                        .zip(condition.data())
                        .map(|(r, c)| (1.0 - alpha) * r + alpha * c)
                        .collect();
                    ImageBuffer::from_vec(render.width(), render.height(), 3, data).map_err(|e| e.to_string())?
                }
                _ => unreachable!(),
            };
            io.put("image", &png(&out)?)?;
        }
        MockSpec::Caption { text } => {
            io.image("image")?;
            io.put("caption", text.as_bytes())?;
        }
        MockSpec::Fail { message } => return Err(message.clone()),
        MockSpec::Sleep { seconds } => {
            std::thread::sleep(std::time::Duration::from_secs_f64(*seconds));
            return Err(format!("slept {seconds} s"));
        }
        MockSpec::Oracle { dir } => oracle(dir, &mut io)?,
    }
    Ok(io.out)
}

fn oracle(dir: &Path, io: &mut Io<'_, '_>) -> Result<(), String> {
    use oracle_files as f;
    let res = |io: &mut Io, name: &str| io.sb.read_resource(&dir.join(name));
    match io.req.kind {
        ProviderKind::DepthNormal => {
            let input = io.image("image")?;
            let scene = decode_png_rgb(&res(io, f::IMAGE)?).map_err(|e| e.to_string())?;
            let background = decode_png_rgb(&res(io, f::BACKGROUND)?).map_err(|e| e.to_string())?;
            let (depth, normal) = if close(&input, &scene) {
                (f::DEPTH, f::NORMAL)
            } else if close(&input, &background) {
                (f::BACKGROUND_DEPTH, f::BACKGROUND_NORMAL)
            } else {
                return Err("image matches neither the oracle scene nor its background".into());
            };
            let (d, n) = (res(io, depth)?, res(io, normal)?);
            io.put("depth", &d)?;
            io.put("normal", &n)?;
        }
        ProviderKind::Inpaint => {
            let input = io.image("image")?;
            let bytes = res(io, f::BACKGROUND)?;
            if !decode_png_rgb(&bytes).is_ok_and(|b| b.same_size(&input)) {
                return Err("oracle background does not match the image size".into());
            }
            io.put("image", &bytes)?;
        }
        ProviderKind::ObjectRecon => {
            let crop = io.image("image")?;
            let mut best: Option<(f64, PathBuf)> = None;
            for path in sorted_files(&dir.join(f::CROPS), "png")? {
                let candidate = decode_png_rgb(&io.sb.read_resource(&path)?).map_err(|e| e.to_string())?;
                if let Some(err) = mse(&crop, &candidate) {
                    if best.as_ref().is_none_or(|(e, _)| err < *e) {
                        best = Some((err, path));
                    }
                }
            }
            let path = match best {
                Some((err, path)) if err <= ORACLE_MATCH_MSE => path,
                _ => return Err("crop matches no oracle object".into()),
            };
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let bytes = res(io, &format!("{}/{name}.ply", f::MESHES))?;
            io.put("mesh", &bytes)?;
        }
        ProviderKind::Segmenter => {
            io.image("image")?;
            for (i, path) in sorted_files(&dir.join(f::MASKS), "png")?.into_iter().enumerate() {
                let bytes = io.sb.read_resource(&path)?;
                io.put_dynamic(&format!("mask_{i:02}"), &format!("masks/mask_{i:02}.png"), &bytes)?;
            }
        }
        ProviderKind::Captioner => {
            io.image("image")?;
            let bytes = res(io, f::CAPTION)?;
            io.put("caption", &bytes)?;
        }
        ProviderKind::Critic | ProviderKind::Echo => unreachable!("rejected by serves()"),
    }
    Ok(())
}

struct Io<'s, 'r> {
    sb: &'s mut Sandbox,
    req: &'r RequestManifest,
    out: Outputs,
}

impl Io<'_, '_> {
    fn input(&self, name: &str) -> Result<&str, String> {
        self.req
            .inputs
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| format!("request has no input `{name}`"))
    }

    fn bytes(&mut self, name: &str) -> Result<Vec<u8>, String> {
        let path = self.input(name)?.to_string();
        self.sb.read(&path)
    }

    fn image(&mut self, name: &str) -> Result<ImageBuffer, String> {
        decode_png_rgb(&self.bytes(name)?).map_err(|e| format!("{name}: {e}"))
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), String> {
        let path = self
            .req
            .outputs
            .get(name)
            .ok_or_else(|| format!("request has no output `{name}`"))?
            .clone();
        self.sb.write(&path, bytes)?;
        self.out.insert(name.to_string(), path);
        Ok(())
    }

    fn put_dynamic(&mut self, name: &str, default: &str, bytes: &[u8]) -> Result<(), String> {
        let path = self.req.outputs.get(name).cloned().unwrap_or_else(|| default.to_string());
        self.sb.write(&path, bytes)?;
        self.out.insert(name.to_string(), path);
        Ok(())
    }
}

fn pfm(img: &ImageBuffer) -> Result<Vec<u8>, String> {
    encode_pfm(img).map_err(|e| e.to_string())
}

fn png(img: &ImageBuffer) -> Result<Vec<u8>, String> {
    encode_png(img).map_err(|e| e.to_string())
}

fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Option<f64> {
    if !a.same_shape(b) || a.data().is_empty() {
        return None;
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Some(s / a.data().len() as f64)
}

fn close(a: &ImageBuffer, b: &ImageBuffer) -> bool {
    mse(a, b).is_some_and(|e| e <= ORACLE_MATCH_MSE)
}

/// Mean color of the pixels that are not crop padding grey.
fn foreground_mean(crop: &ImageBuffer) -> [f64; 3] {
    let grey = 127.0 / 255.0;
    let mut sum = [0.0; 3];
    let mut n = 0.0;
    for i in 0..crop.len_pixels() {
        let c = crop.rgb(i);
        if c.iter().all(|v| (v - grey).abs() < 1e-9) {
            continue;
        }
        (0..3).for_each(|k| sum[k] += c[k]);
        n += 1.0;
    }
    if n > 0.0 {
        sum.map(|s| s / n)
    } else {
        [0.5; 3]
    }
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    Ok(files)
}
