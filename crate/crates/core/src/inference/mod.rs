//! The sequential loop: simulate a round, append it to the dataset, train
//! the likelihood model `q_ψ(x | θ)` (and the posterior model `q_φ(θ | x)`
//! that regularizes it), then sample `p(θ)·q_ψ(x_o | θ)` by MCMC to get the
//! next round's proposals.
//!
//! Every random draw comes from a stream keyed by `(seed, purpose, round,
//! …)`, so a run is reproducible regardless of how seeds are scheduled.

mod adam;
mod dataset;
mod mcmc;
mod rounds;
mod train;

pub use adam::Adam;
pub use dataset::{Entry, RoundDataset};
pub use mcmc::{slice_sample, BatchLogDensity, McmcConfig, McmcOutcome};
pub use rounds::{
    covariance_is_singular, run_experiment, run_seed, sample_posterior_mcmc, ExperimentOutcome, InferenceConfig,
    InferenceState, MetricKind, MetricSettings, RoundArtifacts, RoundMetrics, RoundRecord, SeedFailure,
};
pub use train::{minibatches, split_indices, train_models, validation_loss, TrainConfig, TrainReport};

use crate::density::DensityError;
use crate::losses::LossError;
use crate::metrics::MetricError;
use crate::simulators::SimulatorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("training: {0}")]
    Training(String),
    #[error("{model} model diverged in epoch {epoch} after {halvings} learning-rate halvings")]
    Diverged {
        epoch: usize,
        model: &'static str,
        halvings: usize,
    },
    #[error("mcmc: {0}")]
    Mcmc(String),
    #[error("round {round}: θ slot {index} kept failing to simulate: {last}")]
    SimulationExhausted { round: usize, index: usize, last: String },
    #[error("round {round}: {source}")]
    InRound {
        round: usize,
        #[source]
        source: Box<InferenceError>,
    },
    #[error("every seed failed: {0:?}")]
    AllSeedsFailed(Vec<SeedFailure>),
}

impl InferenceError {
    pub(crate) fn in_round(self, round: usize) -> Self {
        match self {
            e @ (InferenceError::InRound { .. } | InferenceError::SimulationExhausted { .. }) => e,
            e => InferenceError::InRound {
                round,
                source: Box::new(e),
            },
        }
    }

    /// The round the error happened in, when known.
    pub fn round(&self) -> Option<usize> {
        match self {
            InferenceError::InRound { round, .. } | InferenceError::SimulationExhausted { round, .. } => Some(*round),
            _ => None,
        }
    }

    /// The message without its round prefix.
    pub fn detail(&self) -> String {
        match self {
            InferenceError::InRound { source, .. } => source.to_string(),
            InferenceError::SimulationExhausted { index, last, .. } => {
                format!("θ slot {index} kept failing to simulate: {last}")
            }
            e => e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests;
