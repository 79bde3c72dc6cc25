use super::MetricError;
use crate::diffcore::logsumexp;
use crate::simulators::PriorBox;
use rand::RngCore;
use serde::{Deserialize, Serialize};

pub const DEFAULT_IMPORTANCE_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Normalization {
    /// The density is already normalized.
    Normalized,
    /// Midpoint rule on a grid with this many points per dimension.
    Grid { points_per_dim: usize },
    /// Importance sampling from the uniform prior.
    ImportanceSampling { draws: usize },
    /// A grid up to three dimensions, importance sampling beyond.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NltpEstimate {
    /// `−ln p(θ_true) + ln Z`; `+∞` when the normalizer is zero.
    pub value: f64,
    pub log_normalizer: f64,
    /// Standard error of `ln Z`, hence of the value; 0 for the grid.
    pub std_error: f64,
    pub method: Normalization,
}

fn grid_points(dim: usize) -> usize {
    match dim {
        1 => 4000,
        2 => 400,
        _ => 80,
    }
}

/// Negative log of the normalized posterior density at `theta_true`.
pub fn nltp(
    log_density: &dyn Fn(&[f64]) -> f64,
    prior: &PriorBox,
    theta_true: &[f64],
    normalization: Normalization,
    rng: &mut dyn RngCore,
) -> Result<NltpEstimate, MetricError> {
    if theta_true.len() != prior.dim() {
        return Err(MetricError::Dimension(theta_true.len(), prior.dim()));
    }
    if !prior.contains(theta_true) {
        return Err(MetricError::Config(format!("θ_true = {theta_true:?} is outside the prior box")));
    }
    let method = match normalization {
        Normalization::Auto if prior.dim() <= 3 => Normalization::Grid {
            points_per_dim: grid_points(prior.dim()),
        },
        Normalization::Auto => Normalization::ImportanceSampling {
            draws: DEFAULT_IMPORTANCE_DRAWS,
        },
        m => m,
    };
    let (log_z, se) = match method {
        Normalization::Normalized => (0.0, 0.0),
        Normalization::Grid { points_per_dim } => (grid_log_normalizer(log_density, prior, points_per_dim)?, 0.0),
        Normalization::ImportanceSampling { draws } => importance_log_normalizer(log_density, prior, draws, rng)?,
        Normalization::Auto => unreachable!("resolved above"),
    };
    let value = if log_z == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        log_z - log_density(theta_true)
    };
    Ok(NltpEstimate {
        value,
        log_normalizer: log_z,
        std_error: se,
        method,
    })
}

fn grid_log_normalizer(log_density: &dyn Fn(&[f64]) -> f64, prior: &PriorBox, n: usize) -> Result<f64, MetricError> {
    let d = prior.dim();
    if n == 0 || (n as f64).powi(d as i32) > 1e8 {
        return Err(MetricError::Config(format!("{n} points per dimension in {d} dimensions")));
    }
    let sides = prior.sides();
    let total = n.pow(d as u32);
    let mut theta = vec![0.0; d];
    let mut logs = Vec::with_capacity(total);
    for mut idx in 0..total {
        for k in 0..d {
            theta[k] = prior.low[k] + (((idx % n) as f64) + 0.5) * sides[k] / n as f64;
            idx /= n;
        }
        logs.push(log_density(&theta));
    }
    let log_cell: f64 = sides.iter().map(|s| (s / n as f64).ln()).sum();
    Ok(logsumexp(&logs) + log_cell)
}

fn importance_log_normalizer(
    log_density: &dyn Fn(&[f64]) -> f64,
    prior: &PriorBox,
    draws: usize,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64), MetricError> {
    if draws < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, got: draws });
    }
    let logs: Vec<f64> = (0..draws).map(|_| log_density(&prior.sample(rng))).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok((f64::NEG_INFINITY, f64::NAN));
    }
    // weights relative to the largest keep the moments finite
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let n = draws as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let log_z = m + mean.ln() + prior.log_volume();
    Ok((log_z, (var / n).sqrt() / mean))
}
