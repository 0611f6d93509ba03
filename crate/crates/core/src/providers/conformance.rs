//! Protocol conformance check shared by mocks and external providers.
//!
//! A provider conforms when two identical requests both succeed through the
//! typed client (schema, declared outputs present and decodable, sizes
//! matching the inputs), produce byte-identical outputs, and, when the
//! provider leaves an `audit.json`, that log records no access outside the
//! work directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::protocol::{ResponseManifest, Status, RESPONSE_FILE};
use super::sandbox::{AuditLog, AUDIT_FILE};
use super::{CriticRequest, ProtocolProviders, ProviderError, ProviderKind, ProviderSet, ProviderSpec, ProvidersConfig};
use crate::formats::quantize;
use crate::image::ImageBuffer;

/// Inputs sent to the provider under test. Oracles only answer for images
/// of their own scene, so callers can substitute those.
#[derive(Debug, Clone)]
pub struct ConformanceInputs {
    pub image: ImageBuffer,
    /// Inpainting mask, same size as `image`.
    pub mask: ImageBuffer,
    /// Object crop for reconstruction.
    pub crop: ImageBuffer,
    /// Critic condition, same size as `image`.
    pub condition: ImageBuffer,
    pub prompt: String,
}

impl ConformanceInputs {
    /// Deterministic gradient images of the given size with a centered
    /// square mask.
    pub fn synthetic(width: usize, height: usize) -> Self {
        let gradient = |phase: f64| {
            let data = (0..width * height)
                .flat_map(|i| {
                    let x = (i % width) as f64 / width as f64;
                    let y = (i / width) as f64 / height as f64;
                    [x, y, (0.5 * (x + y) + phase).fract()]
                })
                .collect();
            quantize(&ImageBuffer::from_vec(width, height, 3, data).expect("sized"))
        };
        let mut mask = ImageBuffer::filled(width, height, 1, 0.0);
        for y in height / 4..3 * height / 4 {
            for x in width / 4..3 * width / 4 {
                mask.set(x, y, 0, 1.0);
            }
        }
        Self {
            image: gradient(0.0),
            mask,
            crop: gradient(0.25),
            condition: gradient(0.5),
            prompt: "a test scene".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceReport {
    pub kind: ProviderKind,
    /// Output names of the first response.
    pub outputs: Vec<String>,
    /// Whether the provider left an audit log to check.
    pub audited: bool,
}

fn call(p: &mut ProtocolProviders, kind: ProviderKind, inputs: &ConformanceInputs) -> Result<(), ProviderError> {
    match kind {
        ProviderKind::Segmenter => p.segment(&inputs.image).map(drop),
        ProviderKind::DepthNormal => p.depth_normal(&inputs.image).map(drop),
        ProviderKind::Inpaint => p.inpaint(&inputs.image, &inputs.mask).map(drop),
        ProviderKind::ObjectRecon => p.object_recon(&inputs.crop).map(drop),
        ProviderKind::Critic => p
            .critic(&CriticRequest {
                render: &inputs.image,
                condition: &inputs.condition,
                prompt: &inputs.prompt,
                noise_level: 100.0,
                steps: 10,
            })
            .map(drop),
        ProviderKind::Captioner => p.caption(&inputs.image).map(drop),
        ProviderKind::Echo => {
            let png = crate::formats::encode_png(&inputs.image).map_err(|e| ProviderError::Io {
                kind,
                message: e.to_string(),
            })?;
            let files: [(&str, &[u8]); 2] = [("image", &png), ("prompt", inputs.prompt.as_bytes())];
            let out = p.echo(&files)?;
            if out.get("image").map(Vec::as_slice) != Some(&png[..])
                || out.get("prompt").map(Vec::as_slice) != Some(inputs.prompt.as_bytes())
            {
                return Err(ProviderError::Protocol {
                    kind,
                    message: "echo outputs differ from the inputs".into(),
                });
            }
            Ok(())
        }
    }
}

fn work_dirs(root: &Path) -> Result<Vec<PathBuf>, String> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let text = std::fs::read_to_string(dir.join(RESPONSE_FILE)).map_err(|e| format!("{RESPONSE_FILE}: {e}"))?;
    let resp: ResponseManifest = serde_json::from_str(&text).map_err(|e| format!("{RESPONSE_FILE}: {e}"))?;
    if resp.status != Status::Ok {
        return Err(format!("status {:?}", resp.status));
    }
    resp.outputs
        .iter()
        .map(|(name, rel)| {
            let bytes = std::fs::read(dir.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
            Ok((name.clone(), bytes))
        })
        .collect()
}

/// Returns whether an audit log was present.
fn check_audit(dir: &Path) -> Result<bool, String> {
    let path = dir.join(AUDIT_FILE);
    if !path.exists() {
        return Ok(false);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{AUDIT_FILE}: {e}"))?;
    let log: AuditLog = serde_json::from_str(&text).map_err(|e| format!("{AUDIT_FILE}: {e}"))?;
    let bad = log.violations();
    if bad.is_empty() {
        Ok(true)
    } else {
        Err(format!("accesses outside the work directory: {bad:?}"))
    }
}

/// Runs the conformance check for `spec` serving `kind`.
pub fn check_conformance(
    kind: ProviderKind,
    spec: &ProviderSpec,
    inputs: &ConformanceInputs,
) -> Result<ConformanceReport, String> {
    let config = ProvidersConfig::default().with(kind, spec.clone());
    config.validate().map_err(|e| e.to_string())?;
    let mut p = ProtocolProviders::temporary(config).map_err(|e| e.to_string())?;
    for run in 0..2 {
        call(&mut p, kind, inputs).map_err(|e| format!("run {run}: {e}"))?;
    }
    let dirs = work_dirs(p.root())?;
    let [a, b] = dirs.as_slice() else {
        return Err(format!("expected 2 work directories, found {}", dirs.len()));
    };
    let (first, second) = (outputs(a)?, outputs(b)?);
    if first != second {
        return Err("outputs differ between identical requests".into());
    }
    let audited = check_audit(a)? & check_audit(b)?;
    Ok(ConformanceReport {
        kind,
        outputs: first.into_keys().collect(),
        audited,
    })
}

/// Checks that a provider expected to fail surfaces as a typed error rather
/// than a protocol violation, and that its audit log is clean.
pub fn check_failure(
    kind: ProviderKind,
    spec: &ProviderSpec,
    inputs: &ConformanceInputs,
) -> Result<ProviderError, String> {
    let config = ProvidersConfig::default().with(kind, spec.clone());
    config.validate().map_err(|e| e.to_string())?;
    let mut p = ProtocolProviders::temporary(config).map_err(|e| e.to_string())?;
    let err = match call(&mut p, kind, inputs) {
        Ok(()) => return Err("provider succeeded".into()),
        Err(e) => e,
    };
    if !matches!(err, ProviderError::Failed { .. } | ProviderError::Timeout { .. }) {
        return Err(format!("expected a provider error or timeout, got {err}"));
    }
    for dir in work_dirs(p.root())? {
        check_audit(&dir)?;
    }
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::MockSpec;

    #[test]
    fn builtin_critic_conforms() {
        let inputs = ConformanceInputs::synthetic(16, 12);
        let r = check_conformance(ProviderKind::Critic, &ProviderSpec::mock(MockSpec::CriticIdentity), &inputs).unwrap();
        assert_eq!(r.outputs, ["image"]);
        assert!(r.audited);
    }

    #[test]
    fn failing_mock_is_a_provider_error() {
        let inputs = ConformanceInputs::synthetic(8, 8);
        let spec = ProviderSpec::mock(MockSpec::Fail { message: "boom".into() });
        let err = check_failure(ProviderKind::Captioner, &spec, &inputs).unwrap();
        assert!(err.to_string().contains("boom"), "{err}");
        assert!(check_conformance(ProviderKind::Captioner, &spec, &inputs).is_err());
    }
}
