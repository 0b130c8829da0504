//! Dense `f64` tensors with reverse-mode differentiation.

pub mod gradcheck;
mod graph;
mod lstm;
mod tensor;

pub use graph::{softmax_slice, Graph, Var, LOG_FLOOR};
pub use lstm::{lstm_cell, LstmWeights};
pub use tensor::Tensor;
