//! Multi-layer high-resolution class activation maps on a small CNN written from scratch.
//!
//! A backbone CNN is trained end to end, then frozen. The activations right
//! before every max-pool are upsampled to the input resolution, stacked, and
//! globally average-pooled into a single affine head. The head's per-map
//! weights turn the stacked maps into a class activation map at full
//! resolution. Two single-layer baselines (GAP-weighted final-layer CAM and
//! Grad-CAM), a simulated lesion dataset, and a threshold-sweep evaluation
//! complete the pipeline.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the two instantiations used in practice.

pub mod backbone;
pub mod cam;
pub mod error;
pub mod eval;
pub mod io;
pub mod mask;
pub mod ops;
pub mod par;
pub mod pipeline;
pub mod scalar;
pub mod simdata;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use mask::Mask;
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

/// Training precision.
pub type Tensor32 = Tensor<f32>;
/// Gradient-check precision.
pub type Tensor64 = Tensor<f64>;
pub type Parameters32 = backbone::Parameters<f32>;
pub type Parameters64 = backbone::Parameters<f64>;
pub type HeadWeights32 = backbone::HeadWeights<f32>;
pub type CamMap32 = cam::CamMap<f32>;
pub type ModelFile32 = io::ModelFile<f32>;
