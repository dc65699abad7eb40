//! Gaussian splatting with view-direction-modulated opacity and color.
//!
//! The scene is a cloud of anisotropic 3D Gaussians rasterized by a
//! differentiable CPU splatter. A multiresolution hash encoding of each
//! Gaussian's mean, concatenated with the per-Gaussian viewing direction,
//! feeds a tiny MLP whose output multiplies or offsets opacity and/or color
//! per view. Everything numeric is generic over [`math::Real`] so the same
//! code paths run in `f32` for training and `f64` for gradient checking.

pub mod error;
pub mod exec;
pub mod geometry;
pub mod image_buf;
pub mod encoding;
pub mod math;
pub mod mlp;
pub mod sh;

pub use error::{Error, Result};
pub use exec::Parallelism;
