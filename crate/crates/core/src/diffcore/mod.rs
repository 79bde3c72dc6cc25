//! Reverse-mode differentiation over dense matrices.
//!
//! The [`Tape`] records a small set of primitives (elementwise arithmetic,
//! matrix products, `tanh`/`exp`/`log`/`softplus`, reductions, column
//! slicing and concatenation, row repetition and `logsumexp`). That is
//! everything the density models and training losses in this crate need.
//! [`Mlp`] builds tanh networks on top of it and [`grad_check`] compares any
//! tape-built scalar against central finite differences.

mod gradcheck;
mod matrix;
mod mlp;
mod tape;

pub use gradcheck::{check_gradient, flatten, grad_check, unflatten_on_tape, GradCheckError, GradCheckReport};
pub use matrix::Matrix;
pub use mlp::{Activation, Mlp};
pub use tape::{
    logsumexp, sigmoid, softplus, softplus_inverse, Gradients, Tape, TapeError, Var, EXP_ARG_LIMIT, LOG_CEIL,
    LOG_FLOOR,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{what}: expected {expected}, got {got}")]
pub struct ShapeError {
    pub what: &'static str,
    pub expected: usize,
    pub got: usize,
}

impl ShapeError {
    pub fn new(what: &'static str, expected: usize, got: usize) -> Self {
        Self { what, expected, got }
    }
}
