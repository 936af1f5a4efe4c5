//! Spatio-temporal sequence prediction with a vector-quantized prior bank,
//! optical-flow experts over global and local views, and a fused decoder.
//!
//! Every differentiable operator carries a hand-written backward pass and is
//! generic over [`Scalar`], so the same code trains in `f32` and is checked
//! against finite differences in `f64`.

pub mod checkpoint;
pub mod codebank;
pub mod config;
pub mod crops;
pub mod data;
pub mod encoder;
pub mod error;
pub mod flow;
pub mod fusion;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod plot;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DiffArray, Scalar};
