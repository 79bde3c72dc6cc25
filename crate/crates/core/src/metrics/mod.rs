//! Inference-quality measures.
//!
//! * [`mmd`]: unbiased squared maximum mean discrepancy, Gaussian kernel.
//! * [`nltp`]: negative log posterior density at the true parameters.
//! * [`meddist`]: median distance of predictive outputs to the observation.
//! * [`sbc`]: simulation-based calibration rank histograms.
//! * [`mode_diversity`]: how many known posterior modes a sample set
//!   covers, and how evenly.

mod mmd;
mod nltp;
mod sbc;

pub use mmd::{mmd, mmd_permutation_null, Bandwidth, MmdEstimate};
pub use nltp::{nltp, Normalization, NltpEstimate, DEFAULT_IMPORTANCE_DRAWS};
pub use sbc::{sbc, sbc_bins, SbcReport};

use crate::simulators::ModeSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("invalid metric settings: {0}")]
    Config(String),
    #[error("{failed} of {trials} calibration trials failed")]
    TooManyFailures { failed: usize, trials: usize },
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Median of `‖xᵢ − x_o‖`; an even count averages the middle two.
pub fn meddist(outputs: &[Vec<f64>], observation: &[f64]) -> Result<f64, MetricError> {
    if outputs.is_empty() {
        return Err(MetricError::TooFewSamples { needed: 1, got: 0 });
    }
    if let Some(x) = outputs.iter().find(|x| x.len() != observation.len()) {
        return Err(MetricError::Dimension(x.len(), observation.len()));
    }
    Ok(median(&outputs.iter().map(|x| euclidean(x, observation)).collect::<Vec<_>>()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDiversity {
    /// Centers with at least one sample assigned.
    pub covered: usize,
    /// `exp` of the entropy of on-mode assignments, in `[1, centers]`; 0
    /// when no sample is on a mode.
    pub score: f64,
    pub counts: Vec<usize>,
    pub off_mode: usize,
}

/// Assigns each sample to its nearest center when within the capture
/// radius.
pub fn mode_diversity(samples: &[Vec<f64>], modes: &ModeSet) -> Result<ModeDiversity, MetricError> {
    if modes.centers.is_empty() {
        return Err(MetricError::Config("no mode centers declared".into()));
    }
    let mut counts = vec![0usize; modes.centers.len()];
    let mut off_mode = 0;
    for s in samples {
        let (best, d) = modes
            .centers
            .iter()
            .enumerate()
            .map(|(i, c)| (i, euclidean(s, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty centers");
        if d <= modes.capture_radius {
            counts[best] += 1;
        } else {
            off_mode += 1;
        }
    }
    let on: usize = counts.iter().sum();
    let score = if on == 0 {
        0.0
    } else {
        let entropy: f64 = counts
            .iter()
            .filter(|c| **c > 0)
            .map(|&c| {
                let p = c as f64 / on as f64;
                -p * p.ln()
            })
            .sum();
        entropy.exp()
    };
    Ok(ModeDiversity {
        covered: counts.iter().filter(|c| **c > 0).count(),
        score,
        counts,
        off_mode,
    })
}

#[cfg(test)]
mod tests;
