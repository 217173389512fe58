//! Minimal reverse-mode autodiff over dense `f64` matrices, plus Adam.

mod adam;
mod matrix;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::Tensor;
pub use tape::{selu, Tape, Var, SELU_ALPHA, SELU_LAMBDA};
