//! Multi-granularity back-projection transformer for single-image
//! super-resolution, with the tensor/autodiff engine, training loop, data
//! pipeline and quality metrics it needs.

pub mod autograd;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod infer;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;
pub mod verify;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Float, Rng, Tensor};
