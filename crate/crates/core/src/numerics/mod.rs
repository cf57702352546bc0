//! Dense neural-network core: matrices, a reverse-mode tape, parameter
//! storage with Adam state, and finite-difference gradient checking.
//!
//! Sized for 64-unit hidden layers; everything is `f64` so analytic
//! gradients can be verified against central differences to tight
//! tolerances.

mod fastmath;
mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use matrix::Matrix;
pub use params::{he_init, GradBuffer, ParamId, ParamStore, AdamConfig};
pub use tape::{lstm_cell, LstmParamIds, Tape, ValueId};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch { op: &'static str, expected: (usize, usize), got: (usize, usize) },
    #[error("softmax over empty input")]
    EmptyInput,
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("checkpoint is not valid: {0}")]
    BadCheckpoint(String),
}
