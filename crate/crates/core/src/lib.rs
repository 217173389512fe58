//! Full Encoder autoencoders: a tape-based autodiff core, the synthetic
//! nonlinear system used as ground truth, the progressive-patching model,
//! its trainer, and the disentanglement metrics.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod system;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
