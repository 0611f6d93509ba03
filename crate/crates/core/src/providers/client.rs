use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::invoke::{collect_response, invoke_process, write_request};
use super::protocol::{RequestManifest, ResponseManifest};
use super::{serve, CriticRequest, DepthNormal, ProviderError, ProviderKind, ProviderSet, ProvidersConfig};
use crate::formats::{decode_png_mask, decode_png_rgb, encode_png, parse_pfm, parse_ply};
use crate::image::ImageBuffer;
use crate::scene::TriangleMesh;

/// [`ProviderSet`] over `providers.json`. Each call gets a fresh work
/// directory `NNNN-kind` under `root`, which is kept for inspection.
#[derive(Debug)]
pub struct ProtocolProviders {
    config: ProvidersConfig,
    root: PathBuf,
    _temp: Option<tempfile::TempDir>,
    seq: usize,
    calls: BTreeMap<ProviderKind, usize>,
}

fn protocol(kind: ProviderKind, message: impl Into<String>) -> ProviderError {
    ProviderError::Protocol {
        kind,
        message: message.into(),
    }
}

impl ProtocolProviders {
    pub fn new(config: ProvidersConfig, root: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            config,
            root: root.to_path_buf(),
            _temp: None,
            seq: 0,
            calls: BTreeMap::new(),
        })
    }

    /// Work directories live in a temporary directory removed on drop.
    pub fn temporary(config: ProvidersConfig) -> std::io::Result<Self> {
        let temp = tempfile::Builder::new().prefix("scenelift-providers-").tempdir()?;
        let mut p = Self::new(config, temp.path())?;
        p._temp = Some(temp);
        Ok(p)
    }

    pub fn config(&self) -> &ProvidersConfig {
        &self.config
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Number of invocations of `kind` so far, failed ones included.
    pub fn calls(&self, kind: ProviderKind) -> usize {
        self.calls.get(&kind).copied().unwrap_or(0)
    }

    /// Runs one request. `files` supplies the bytes of each named input;
    /// returns the work directory and the checked response.
    pub fn invoke_raw(
        &mut self,
        kind: ProviderKind,
        files: &[(&str, &[u8])],
        params: serde_json::Map<String, serde_json::Value>,
    ) -> Result<(PathBuf, ResponseManifest), ProviderError> {
        let spec = self.config.get(kind).cloned().ok_or(ProviderError::NotConfigured { kind })?;
        self.seq += 1;
        *self.calls.entry(kind).or_default() += 1;
        let workdir = self.root.join(format!("{:04}-{kind}", self.seq));
        let io = |e: std::io::Error| ProviderError::Io {
            kind,
            message: e.to_string(),
        };
        std::fs::create_dir_all(&workdir).map_err(io)?;

        let mut request = RequestManifest::new(kind);
        request.params = params;
        for (name, bytes) in files {
            let rel = request
                .inputs
                .entry(name.to_string())
                .or_insert_with(|| format!("in_{name}"))
                .clone();
            std::fs::write(workdir.join(rel), bytes).map_err(io)?;
        }
        if kind == ProviderKind::Echo {
            request.outputs = request.inputs.iter().map(|(n, p)| (n.clone(), format!("out_{p}"))).collect();
        }
        request.validate().map_err(|m| protocol(kind, m))?;

        let response = if let Some(mock) = &spec.mock {
            write_request(&workdir, &request)?;
            let start = Instant::now();
            serve(mock, &workdir).map_err(io)?;
            if start.elapsed().as_secs_f64() > spec.timeout {
                return Err(ProviderError::Timeout {
                    kind,
                    seconds: spec.timeout,
                });
            }
            collect_response(&workdir, &request)?
        } else {
            invoke_process(&spec, &workdir, &request)?
        };
        log::debug!("{kind} call {} ok in {}", self.seq, workdir.display());
        Ok((workdir, response))
    }

    fn output(
        &self,
        kind: ProviderKind,
        workdir: &Path,
        response: &ResponseManifest,
        name: &str,
    ) -> Result<Vec<u8>, ProviderError> {
        let rel = response
            .outputs
            .get(name)
            .ok_or_else(|| protocol(kind, format!("missing output `{name}`")))?;
        std::fs::read(workdir.join(rel)).map_err(|e| protocol(kind, format!("{rel}: {e}")))
    }

    fn png_input(kind: ProviderKind, image: &ImageBuffer) -> Result<Vec<u8>, ProviderError> {
        encode_png(image).map_err(|e| ProviderError::Io {
            kind,
            message: e.to_string(),
        })
    }

    fn same_size(kind: ProviderKind, out: &ImageBuffer, like: &ImageBuffer, what: &str) -> Result<(), ProviderError> {
        if out.same_size(like) {
            Ok(())
        } else {
            Err(protocol(
                kind,
                format!(
                    "{what} is {}x{}, expected {}x{}",
                    out.width(),
                    out.height(),
                    like.width(),
                    like.height()
                ),
            ))
        }
    }

    /// Round-trips named files through the echo provider.
    pub fn echo(&mut self, files: &[(&str, &[u8])]) -> Result<BTreeMap<String, Vec<u8>>, ProviderError> {
        let kind = ProviderKind::Echo;
        let (dir, resp) = self.invoke_raw(kind, files, Default::default())?;
        resp.outputs
            .keys()
            .map(|name| Ok((name.clone(), self.output(kind, &dir, &resp, name)?)))
            .collect()
    }
}

impl ProviderSet for ProtocolProviders {
    fn segment(&mut self, image: &ImageBuffer) -> Result<Vec<ImageBuffer>, ProviderError> {
        let kind = ProviderKind::Segmenter;
        let png = Self::png_input(kind, image)?;
        let (dir, resp) = self.invoke_raw(kind, &[("image", &png)], Default::default())?;
        let mut masks = Vec::new();
        for name in resp.outputs.keys() {
            let bytes = self.output(kind, &dir, &resp, name)?;
            let mask = decode_png_mask(&bytes).map_err(|e| protocol(kind, format!("{name}: {e}")))?;
            Self::same_size(kind, &mask, image, name)?;
            masks.push(mask);
        }
        Ok(masks)
    }

    fn depth_normal(&mut self, image: &ImageBuffer) -> Result<DepthNormal, ProviderError> {
        let kind = ProviderKind::DepthNormal;
        let png = Self::png_input(kind, image)?;
        let (dir, resp) = self.invoke_raw(kind, &[("image", &png)], Default::default())?;
        let depth = parse_pfm(&self.output(kind, &dir, &resp, "depth")?).map_err(|e| protocol(kind, e.to_string()))?;
        let normal = parse_pfm(&self.output(kind, &dir, &resp, "normal")?).map_err(|e| protocol(kind, e.to_string()))?;
        if depth.channels() != 1 || normal.channels() != 3 {
            return Err(protocol(kind, "depth must have 1 channel and normals 3"));
        }
        Self::same_size(kind, &depth, image, "depth")?;
        Self::same_size(kind, &normal, image, "normal")?;
        Ok(DepthNormal { depth, normal })
    }

    fn inpaint(&mut self, image: &ImageBuffer, mask: &ImageBuffer) -> Result<ImageBuffer, ProviderError> {
        let kind = ProviderKind::Inpaint;
        let png = Self::png_input(kind, image)?;
        let mask_png = Self::png_input(kind, &mask.map(|v| if v > 0.5 { 1.0 } else { 0.0 }))?;
        let (dir, resp) = self.invoke_raw(kind, &[("image", &png), ("mask", &mask_png)], Default::default())?;
        let out = decode_png_rgb(&self.output(kind, &dir, &resp, "image")?).map_err(|e| protocol(kind, e.to_string()))?;
        Self::same_size(kind, &out, image, "inpainted image")?;
        Ok(out)
    }

    fn object_recon(&mut self, crop: &ImageBuffer) -> Result<TriangleMesh, ProviderError> {
        let kind = ProviderKind::ObjectRecon;
        let png = Self::png_input(kind, crop)?;
        let (dir, resp) = self.invoke_raw(kind, &[("image", &png)], Default::default())?;
        parse_ply(&self.output(kind, &dir, &resp, "mesh")?).map_err(|e| protocol(kind, e.to_string()))
    }

    fn critic(&mut self, request: &CriticRequest<'_>) -> Result<ImageBuffer, ProviderError> {
        let kind = ProviderKind::Critic;
        let render = Self::png_input(kind, request.render)?;
        let condition = Self::png_input(kind, request.condition)?;
        let mut params = serde_json::Map::new();
        params.insert("noise_level".into(), request.noise_level.into());
        params.insert("steps".into(), request.steps.into());
        let files: [(&str, &[u8]); 3] = [
            ("render", &render),
            ("condition", &condition),
            ("prompt", request.prompt.as_bytes()),
        ];
        let (dir, resp) = self.invoke_raw(kind, &files, params)?;
        let out = decode_png_rgb(&self.output(kind, &dir, &resp, "image")?).map_err(|e| protocol(kind, e.to_string()))?;
        Self::same_size(kind, &out, request.render, "refined image")?;
        Ok(out)
    }

    fn caption(&mut self, image: &ImageBuffer) -> Result<String, ProviderError> {
        let kind = ProviderKind::Captioner;
        let png = Self::png_input(kind, image)?;
        let (dir, resp) = self.invoke_raw(kind, &[("image", &png)], Default::default())?;
        let bytes = self.output(kind, &dir, &resp, "caption")?;
        String::from_utf8(bytes)
            .map(|s| s.trim().to_string())
            .map_err(|_| protocol(kind, "caption is not utf-8"))
    }
}
