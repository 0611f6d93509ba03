//! Single-view decomposed scene reconstruction.
//!
//! A scene is lifted from one image into independent object meshes plus a
//! background mesh, then refined jointly through a differentiable rasterizer.
//! Pretrained networks (segmentation, single-object reconstruction, depth and
//! normal estimation, inpainting, image editing, captioning) are external
//! providers reached through a file-based subprocess protocol.

pub mod background;
pub mod bundle;
pub mod depth;
pub mod edit;
pub mod error;
pub mod formats;
pub mod image;
pub mod lifter;
pub mod metrics;
pub mod pipeline;
pub mod primitives;
pub mod providers;
pub mod raster;
pub mod refine;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
pub use image::ImageBuffer;
pub use scene::{
    apply_affine, default_camera, spiral_trajectory, AffineParams, PinholeCamera, Scene, SceneBounds, SceneObject,
    TriangleMesh, Vec3,
};
