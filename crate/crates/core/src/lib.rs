//! Point-set segmentation of raster sketches.
//!
//! The pipeline turns a color-coded sketch image into an ordered set of 2D
//! points ([`sketchio`]), runs them through a multi-column point-convolution
//! network built on a small reverse-mode differentiation core ([`autodiff`],
//! [`model`]), trains it with momentum SGD ([`train`]) and scores the result
//! with point- and component-level accuracy ([`metrics`]).
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the two
//! precisions the pipeline uses.

pub mod autodiff;
pub mod checks;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod sketchio;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Training and inference precision.
pub type Tensor32 = tensor::Tensor<f32>;
/// Finite-difference checking precision.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type ScoreMatrix32 = model::ScoreMatrix<f32>;
