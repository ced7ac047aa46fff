//! Rate-distortion optimized compression of 3D Gaussian splatting scenes.
//!
//! The crate covers the whole pipeline: the Gaussian scene model and its PLY
//! interchange format ([`gaussian`], [`ply`]), a differentiable CPU
//! rasterizer ([`render`]), learnable pruning masks ([`pruning`]),
//! entropy-constrained vector quantization ([`ecvq`]), the two-stage
//! trainer ([`train`]) and the compressed bitstream ([`codec`]).

pub mod camera;
pub mod codec;
pub mod ecvq;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod metrics;
pub mod model;
pub mod ply;
pub mod pruning;
pub mod render;
pub mod sh;
pub mod train;

pub use camera::Camera;
pub use error::{Error, Result};
pub use gaussian::GaussianCloud;
pub use image::RenderedImage;
pub use model::ModelState;
pub use pruning::MaskSet;
