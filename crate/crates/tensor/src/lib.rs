//! Minimal dense tensor engine in f64 with reverse-mode automatic
//! differentiation, the neural-network primitives built on it, Adam/AdamW,
//! a warmup + cosine learning-rate schedule, and a binary checkpoint format.

pub mod autograd;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod param;
pub mod suite;
mod tensor;

pub use autograd::{backward, with_branch_probe, Gradients};
pub use error::{Result, TensorError};
pub use ops::norm::{BatchNormMode, BatchStats};
pub use optim::{LrSchedule, OptimizerKind, OptimizerState};
pub use param::{uniform_fan_in, ParamStore, Parameter};
pub use tensor::Tensor;
