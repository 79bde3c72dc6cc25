//! Exhaustive and closed-form checks of the regularized objective.
//!
//! * [`toy`]: the two-parameter Gaussian chain, its closed-form losses and
//!   gradient-descent trajectories.
//! * [`DiscreteJoint`] and [`discrete_quantities`]: every term of the
//!   penalty decomposition by exhaustive summation on a finite grid.
//! * [`verify_theorem2`]: the closed-form regularized optimum against a
//!   projected-gradient minimizer.

mod discrete;
mod theorem2;
pub mod toy;

pub use discrete::{discrete_quantities, theorem1_report, DiscreteJoint, DiscreteQuantities, Theorem1Report};
pub use theorem2::{
    closed_form_row, normalizing_constant, posterior_scores, project_to_simplex, projected_gradient_row,
    regularized_logit_gradient, row_objective, theorem2_report, verify_theorem2, DescentOutcome, Theorem2Outcome,
    Theorem2Report, Theorem2Row,
};
pub use toy::{toy_descent, toy_losses, toy_report, ToyLosses, ToyObjective, ToyReport, Trajectory};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{0}")]
    Domain(String),
    #[error("descent diverged: {0}")]
    Diverged(String),
    #[error("{table} has {got} entries, expected {expected}")]
    Shape { table: &'static str, expected: usize, got: usize },
    #[error("{table} row {row:?} sums to {sum}")]
    NotNormalized { table: &'static str, row: Option<usize>, sum: f64 },
    #[error("{table}[{row}][{col}]: {reason}")]
    Cell { table: &'static str, row: usize, col: usize, reason: String },
}
