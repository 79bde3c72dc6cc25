//! Training objectives and the regularization schedule.
//!
//! * [`snl_loss`]: negative log-likelihood of the neural likelihood.
//! * [`apt_atomic_loss`]: atomic, proposal-corrected negative log-posterior
//!   of the neural posterior, normalized by contrastive atoms.
//! * [`npr_penalty`]: the posterior-regularization penalty, evaluated on
//!   reparameterized draws from the likelihood model.
//! * [`regularized_loss`]: the SNL loss plus `λ` times the penalty.
//! * [`LambdaSchedule`]: per-round `λ`.
//! * [`loss_gradient_report`]: finite-difference checks of all four losses.
//! * [`relative_mi`]: mutual information of a model relative to the
//!   simulator's, a likelihood-fit diagnostic.

mod atoms;
mod gradients;
mod objectives;
mod relative_mi;
mod schedule;
#[cfg(test)]
pub(crate) mod testing;

pub use atoms::{AtomSet, AtomicNormalizer};
pub use gradients::{
    loss_gradient_report, GradientCheckError, LossGradientCheck, LossGradientReport, GRADIENT_TOLERANCE,
};
pub use objectives::{
    apt_atomic_loss, npr_penalty, regularized_loss, snl_loss, PenaltyBatch, PenaltyTerm, RegularizedTerm,
    MAX_DROPPED_FRACTION,
};
pub use relative_mi::{mutual_information, relative_mi, LikelihoodModel, MiEstimate, RelativeMi};
pub use schedule::{LambdaSchedule, ScheduleKind};

use crate::density::DensityError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("malformed batch: {0}")]
    Batch(String),
    #[error("non-finite log density {value} at batch index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("invalid normalizer estimate ({value}) at batch index {index}")]
    BadNormalizer { index: usize, value: f64 },
    #[error("atoms: {0}")]
    Atoms(String),
    #[error("draws per θ must be at least 1")]
    DrawsPerTheta,
    #[error("{dropped} of {total} penalty samples were non-finite")]
    TooManyDropped { dropped: usize, total: usize },
    #[error("λ must be finite and nonnegative, got {0}")]
    Lambda(f64),
    #[error("λ > 0 needs a penalty batch")]
    MissingPenaltyBatch,
    #[error("round {round} outside 1..={rounds}")]
    RoundOutOfRange { round: usize, rounds: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
}
