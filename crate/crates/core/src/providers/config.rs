//! `providers.json`: which provider serves each kind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mock::MockSpec;
use super::ProviderKind;
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT_SECS: f64 = 300.0;
pub const CONFIG_VERSION: u32 = 1;

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}

/// One provider: either an external `command` (program plus arguments; the
/// work directory is appended as the last argument) or a built-in `mock`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockSpec>,
    /// Seconds.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, String>,
}

impl ProviderSpec {
    pub fn command(command: Vec<String>) -> Self {
        Self {
            command: Some(command),
            mock: None,
            timeout: DEFAULT_TIMEOUT_SECS,
            env: BTreeMap::new(),
        }
    }

    pub fn mock(spec: MockSpec) -> Self {
        Self {
            command: None,
            mock: Some(spec),
            timeout: DEFAULT_TIMEOUT_SECS,
            env: BTreeMap::new(),
        }
    }

    pub fn validate(&self, kind: ProviderKind) -> Result<()> {
        match (&self.command, &self.mock) {
            (Some(c), None) if c.is_empty() || c[0].is_empty() => {
                return Err(Error::Config(format!("{kind}: command is empty")))
            }
            (Some(_), None) => {}
            (None, Some(m)) => m.validate(kind).map_err(|e| Error::Config(format!("{kind}: {e}")))?,
            _ => return Err(Error::Config(format!("{kind}: set exactly one of `command` and `mock`"))),
        }
        if !(self.timeout > 0.0) || !self.timeout.is_finite() {
            return Err(Error::Config(format!("{kind}: timeout must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    pub providers: BTreeMap<ProviderKind, ProviderSpec>,
}

fn config_version() -> u32 {
    CONFIG_VERSION
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            providers: BTreeMap::new(),
        }
    }
}

/// Parses and validates a `providers.json` document. Relative paths resolve
/// against the working directory; use [`ProvidersConfig::load`] for files.
pub fn parse_providers_config(text: &str) -> Result<ProvidersConfig> {
    let cfg: ProvidersConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("providers.json: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ProvidersConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported providers.json version {}", self.version)));
        }
        for (kind, spec) in &self.providers {
            spec.validate(*kind)?;
        }
        Ok(())
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ProvidersConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for spec in self.providers.values_mut() {
            if let Some(cmd) = &mut spec.command {
                if cmd[0].contains('/') && Path::new(&cmd[0]).is_relative() {
                    cmd[0] = base.join(&cmd[0]).to_string_lossy().into_owned();
                }
            }
            if let Some(m) = &mut spec.mock {
                m.resolve_paths(base);
            }
        }
    }

    pub fn with(mut self, kind: ProviderKind, spec: ProviderSpec) -> Self {
        self.providers.insert(kind, spec);
        self
    }

    pub fn get(&self, kind: ProviderKind) -> Option<&ProviderSpec> {
        self.providers.get(&kind)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Resolves a possibly relative resource path against `base`.
pub(crate) fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}
