//! Minimal reverse-mode automatic differentiation over `f64` tensors, plus the
//! Adam optimizer and step-decay learning-rate schedules used for training.

mod adam;
mod params;
mod schedule;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{accumulate_gradients, BoundParams, ParameterStore};
pub use schedule::{LrSchedule, Stage};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
