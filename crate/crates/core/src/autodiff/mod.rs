//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as it is evaluated; [`Tape::backward`]
//! walks the records in exact reverse order and accumulates gradients. Only
//! the operations the navigation agent and its losses need are provided.
//! Every operation checks shapes up front and rejects non-finite results.

mod loss;
mod lstm;
mod tape;
mod tensor;

pub use loss::{depth_ce, entropy, loop_ce, policy_gradient_term, value_mse, LOG_FLOOR};
pub use lstm::{lstm_cell, LstmWeights};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a single-element output, got shape {0:?}")]
    NotScalar(Vec<usize>),
}
