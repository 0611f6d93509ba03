//! Edit scripts: delete, move and recolor objects of a scene bundle.

use serde::{Deserialize, Serialize};

use crate::bundle::SceneBundle;
use crate::error::{Error, Result};
use crate::scene::Vec3;

pub const EDIT_SCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecolorMode {
    Multiply,
    Replace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum EditOp {
    Delete { id: usize },
    /// Adds `delta` to the object's world translation.
    Move { id: usize, delta: [f64; 3] },
    Recolor { id: usize, mode: RecolorMode, rgb: [f64; 3] },
}

impl EditOp {
    pub fn id(&self) -> usize {
        match *self {
            EditOp::Delete { id } | EditOp::Move { id, .. } | EditOp::Recolor { id, .. } => id,
        }
    }
}

fn script_version() -> u32 {
    EDIT_SCRIPT_VERSION
}

/// An ordered list of operations applied one after another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditScript {
    #[serde(default = "script_version")]
    pub version: u32,
    pub operations: Vec<EditOp>,
}

impl EditScript {
    pub fn new(operations: Vec<EditOp>) -> Self {
        Self {
            version: EDIT_SCRIPT_VERSION,
            operations,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let s: EditScript = serde_json::from_str(text).map_err(|e| Error::format("edit script", e.to_string()))?;
        if s.version != EDIT_SCRIPT_VERSION {
            return Err(Error::format("edit script", format!("unsupported version {}", s.version)));
        }
        Ok(s)
    }

    /// Checks every operation against `bundle`, following deletions in order:
    /// an id deleted earlier in the script no longer exists.
    pub fn validate(&self, bundle: &SceneBundle) -> Result<()> {
        let mut live: Vec<usize> = bundle.objects.iter().map(|o| o.id).collect();
        for (i, op) in self.operations.iter().enumerate() {
            let id = op.id();
            let Some(pos) = live.iter().position(|&x| x == id) else {
                return Err(Error::Validation(format!("operation {i}: no object with id {id}")));
            };
            match op {
                EditOp::Delete { .. } => {
                    live.remove(pos);
                }
                EditOp::Move { delta, .. } => {
                    if !delta.iter().all(|v| v.is_finite()) {
                        return Err(Error::Validation(format!("operation {i}: move delta must be finite")));
                    }
                }
                EditOp::Recolor { rgb, .. } => {
                    if !rgb.iter().all(|v| (0.0..=1.0).contains(v)) {
                        return Err(Error::Validation(format!("operation {i}: rgb must lie in [0, 1]")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Applies `script` to a copy of `bundle`; the source is left untouched.
pub fn apply_edits(bundle: &SceneBundle, script: &EditScript) -> Result<SceneBundle> {
    script.validate(bundle)?;
    let mut out = bundle.clone();
    for op in &script.operations {
        let idx = out.object_index(op.id()).expect("validated");
        match *op {
            EditOp::Delete { .. } => {
                out.objects.remove(idx);
            }
            EditOp::Move { delta, .. } => {
                out.objects[idx].affine.translation += Vec3::from(delta);
            }
            EditOp::Recolor { mode, rgb, .. } => {
                for c in &mut out.objects[idx].mesh.colors {
                    for k in 0..3 {
                        let v = match mode {
                            RecolorMode::Multiply => c[k] * rgb[k],
                            RecolorMode::Replace => rgb[k],
                        };
                        c[k] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    out.validate()?;
    Ok(out)
}
