//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

pub mod check;
pub mod params;
pub mod tape;

pub use check::{gradient_check, gradient_check_params, ParamCheck, DEFAULT_EPSILON};
pub use params::{GradStore, ParamId, ParamSet, Parameter};
pub use tape::{log_sum_exp, sigmoid, softplus, Primitive, Tape, Var};
