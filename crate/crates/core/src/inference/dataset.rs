use super::InferenceError;
use crate::diffcore::Matrix;
use crate::simulators::PriorBox;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub theta: Vec<f64>,
    pub x: Vec<f64>,
    pub round: usize,
}

/// Append-only simulation record. Rounds are contiguous from 1 and every θ
/// lies in the prior box, so uniform sampling over entries draws from the
/// mixture of all proposals used so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDataset {
    prior: PriorBox,
    x_dim: usize,
    entries: Vec<Entry>,
}

impl RoundDataset {
    pub fn new(prior: PriorBox, x_dim: usize) -> Self {
        Self {
            prior,
            x_dim,
            entries: Vec::new(),
        }
    }

    pub fn prior(&self) -> &PriorBox {
        &self.prior
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Last completed round, 0 when empty.
    pub fn rounds(&self) -> usize {
        self.entries.last().map_or(0, |e| e.round)
    }

    /// Appends one round of `(θ, x)` pairs, tagged `rounds() + 1`.
    pub fn append_round(&mut self, pairs: Vec<(Vec<f64>, Vec<f64>)>) -> Result<usize, InferenceError> {
        if pairs.is_empty() {
            return Err(InferenceError::Dataset("a round needs at least one entry".into()));
        }
        for (theta, x) in &pairs {
            if theta.len() != self.prior.dim() || !self.prior.contains(theta) {
                return Err(InferenceError::Dataset(format!("θ = {theta:?} is outside the prior box")));
            }
            if x.len() != self.x_dim || x.iter().any(|v| !v.is_finite()) {
                return Err(InferenceError::Dataset(format!("x = {x:?} is not a finite {}-vector", self.x_dim)));
            }
        }
        let round = self.rounds() + 1;
        self.entries
            .extend(pairs.into_iter().map(|(theta, x)| Entry { theta, x, round }));
        Ok(round)
    }

    pub fn thetas(&self) -> Matrix {
        Matrix::from_rows(&self.entries.iter().map(|e| &e.theta[..]).collect::<Vec<_>>())
    }

    pub fn xs(&self) -> Matrix {
        Matrix::from_rows(&self.entries.iter().map(|e| &e.x[..]).collect::<Vec<_>>())
    }

    pub fn round_tags(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.round).collect()
    }

    /// Entry count per round, index 0 holding round 1.
    pub fn round_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.rounds()];
        for e in &self.entries {
            counts[e.round - 1] += 1;
        }
        counts
    }
}
