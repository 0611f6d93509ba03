//! Request and response manifests.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ProviderKind;

pub const PROTOCOL_VERSION: u32 = 1;
pub const REQUEST_FILE: &str = "request.json";
pub const RESPONSE_FILE: &str = "response.json";
pub const STDOUT_FILE: &str = "stdout.log";
pub const STDERR_FILE: &str = "stderr.log";

/// Written by the engine as `request.json`. `inputs` and `outputs` map
/// logical names to paths relative to the work directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestManifest {
    pub protocol_version: u32,
    pub kind: ProviderKind,
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

/// Written by the provider as `response.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseManifest {
    pub status: Status,
    #[serde(default)]
    pub message: Option<String>,
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

impl ResponseManifest {
    pub fn ok(outputs: BTreeMap<String, String>) -> Self {
        Self {
            status: Status::Ok,
            message: None,
            outputs,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self {
            status: Status::Error,
            message: Some(message.into()),
            outputs: BTreeMap::new(),
        }
    }
}

/// Fixed input and output names per kind. Segmenter outputs are dynamic
/// (`mask_00`, `mask_01`, ...) and echo mirrors its inputs.
pub fn wire_inputs(kind: ProviderKind) -> &'static [(&'static str, &'static str)] {
    match kind {
        ProviderKind::Segmenter | ProviderKind::DepthNormal | ProviderKind::ObjectRecon | ProviderKind::Captioner => {
            &[("image", "image.png")]
        }
        ProviderKind::Inpaint => &[("image", "image.png"), ("mask", "mask.png")],
        ProviderKind::Critic => &[
            ("render", "render.png"),
            ("condition", "condition.png"),
            ("prompt", "prompt.txt"),
        ],
        ProviderKind::Echo => &[],
    }
}

pub fn wire_outputs(kind: ProviderKind) -> &'static [(&'static str, &'static str)] {
    match kind {
        ProviderKind::DepthNormal => &[("depth", "depth.pfm"), ("normal", "normal.pfm")],
        ProviderKind::ObjectRecon => &[("mesh", "mesh.ply")],
        ProviderKind::Inpaint => &[("image", "inpainted.png")],
        ProviderKind::Critic => &[("image", "refined.png")],
        ProviderKind::Captioner => &[("caption", "caption.txt")],
        ProviderKind::Segmenter | ProviderKind::Echo => &[],
    }
}

/// A path is acceptable on the wire when it is relative, non-empty and has
/// only normal components.
pub fn check_relative(path: &str) -> Result<PathBuf, String> {
    if path.is_empty() {
        return Err("empty path".into());
    }
    let p = Path::new(path);
    for c in p.components() {
        match c {
            Component::Normal(_) => {}
            _ => return Err(format!("path `{path}` must be relative without `..` or `.`")),
        }
    }
    Ok(p.to_path_buf())
}

impl RequestManifest {
    pub fn new(kind: ProviderKind) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            kind,
            inputs: wire_inputs(kind).iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            params: serde_json::Map::new(),
            outputs: wire_outputs(kind).iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(format!("unsupported protocol version {}", self.protocol_version));
        }
        for (name, path) in self.inputs.iter().chain(&self.outputs) {
            check_relative(path).map_err(|e| format!("{name}: {e}"))?;
        }
        for (name, _) in wire_inputs(self.kind) {
            if !self.inputs.contains_key(*name) {
                return Err(format!("missing input `{name}`"));
            }
        }
        for (name, _) in wire_outputs(self.kind) {
            if !self.outputs.contains_key(*name) {
                return Err(format!("missing output `{name}`"));
            }
        }
        Ok(())
    }
}

pub fn parse_request(text: &str) -> Result<RequestManifest, String> {
    let req: RequestManifest = serde_json::from_str(text).map_err(|e| e.to_string())?;
    req.validate()?;
    Ok(req)
}

/// Parses and validates a response; output paths must be relative and every
/// output requested must be listed on success.
pub fn parse_response(text: &str, request: &RequestManifest) -> Result<ResponseManifest, String> {
    let resp: ResponseManifest = serde_json::from_str(text).map_err(|e| e.to_string())?;
    for (name, path) in &resp.outputs {
        check_relative(path).map_err(|e| format!("{name}: {e}"))?;
    }
    if resp.status == Status::Ok {
        for name in request.outputs.keys() {
            if !resp.outputs.contains_key(name) {
                return Err(format!("response lacks requested output `{name}`"));
            }
        }
    }
    Ok(resp)
}
