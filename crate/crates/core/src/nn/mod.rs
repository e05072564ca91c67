//! Minimal reverse-mode differentiation for 1D convolutional networks.

pub mod checkpoint;
pub mod ops;
pub mod params;
pub mod schedule;
pub mod tape;
pub mod tensor;

pub use params::{Group, Optimizer, OptimizerKind, ParameterStore};
pub use schedule::{lambda_schedule, lr_schedule};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
