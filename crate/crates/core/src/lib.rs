//! Variational sequential labelers on a small reverse-mode autodiff core.

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod variational;

pub use error::{Error, Result};
pub use model::{ModelConfig, Variant, VocabSizes, VslModel};
pub use tensor::Tensor;
