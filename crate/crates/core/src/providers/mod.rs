//! External model providers and the file-based protocol used to reach them.
//!
//! Every call gets a private work directory holding `request.json` and the
//! input files. The provider writes its outputs and `response.json` into the
//! same directory. Providers are either subprocesses (`command`) or built-in
//! deterministic mocks (`mock`) that run in process over the same protocol.

mod client;
mod config;
mod invoke;
pub mod conformance;
pub mod mock;
pub mod protocol;
pub mod sandbox;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageBuffer;
use crate::scene::TriangleMesh;

pub use client::ProtocolProviders;
pub use config::{parse_providers_config, ProviderSpec, ProvidersConfig, DEFAULT_TIMEOUT_SECS};
pub use invoke::invoke_process;
pub use mock::{serve, MockSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Segmenter,
    ObjectRecon,
    DepthNormal,
    Inpaint,
    Critic,
    Captioner,
    /// Copies every input to an output; used to test protocol conformance.
    Echo,
}

impl ProviderKind {
    pub const ALL: [ProviderKind; 7] = [
        ProviderKind::Segmenter,
        ProviderKind::ObjectRecon,
        ProviderKind::DepthNormal,
        ProviderKind::Inpaint,
        ProviderKind::Critic,
        ProviderKind::Captioner,
        ProviderKind::Echo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Segmenter => "segmenter",
            ProviderKind::ObjectRecon => "object_recon",
            ProviderKind::DepthNormal => "depth_normal",
            ProviderKind::Inpaint => "inpaint",
            ProviderKind::Critic => "critic",
            ProviderKind::Captioner => "captioner",
            ProviderKind::Echo => "echo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no provider configured for `{kind}`")]
    NotConfigured { kind: ProviderKind },

    #[error("provider `{kind}` could not be started: {message}")]
    Launch { kind: ProviderKind, message: String },

    #[error("provider `{kind}` timed out after {seconds} s")]
    Timeout { kind: ProviderKind, seconds: f64 },

    #[error("provider `{kind}` failed: {message}")]
    Failed { kind: ProviderKind, message: String },

    #[error("provider `{kind}` violated the protocol: {message}")]
    Protocol { kind: ProviderKind, message: String },

    #[error("provider `{kind}` i/o error: {message}")]
    Io { kind: ProviderKind, message: String },
}

impl ProviderError {
    pub fn kind(&self) -> ProviderKind {
        match self {
            ProviderError::NotConfigured { kind }
            | ProviderError::Launch { kind, .. }
            | ProviderError::Timeout { kind, .. }
            | ProviderError::Failed { kind, .. }
            | ProviderError::Protocol { kind, .. }
            | ProviderError::Io { kind, .. } => *kind,
        }
    }
}

/// Normalized depth in `[0, 1]` and unit camera-frame normals.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthNormal {
    pub depth: ImageBuffer,
    pub normal: ImageBuffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticRequest<'a> {
    pub render: &'a ImageBuffer,
    pub condition: &'a ImageBuffer,
    pub prompt: &'a str,
    pub noise_level: f64,
    /// Denoising steps the critic runs.
    pub steps: usize,
}

/// Typed access to every provider capability.
pub trait ProviderSet {
    fn segment(&mut self, image: &ImageBuffer) -> Result<Vec<ImageBuffer>, ProviderError>;
    fn depth_normal(&mut self, image: &ImageBuffer) -> Result<DepthNormal, ProviderError>;
    fn inpaint(&mut self, image: &ImageBuffer, mask: &ImageBuffer) -> Result<ImageBuffer, ProviderError>;
    fn object_recon(&mut self, crop: &ImageBuffer) -> Result<TriangleMesh, ProviderError>;
    fn critic(&mut self, request: &CriticRequest<'_>) -> Result<ImageBuffer, ProviderError>;
    fn caption(&mut self, image: &ImageBuffer) -> Result<String, ProviderError>;
}
