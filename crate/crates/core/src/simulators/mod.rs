//! Stochastic forward models with uniform box priors.
//!
//! Every built-in is a pure function of `(θ, seed)`. Simulators with a
//! tractable likelihood also expose it, and multimodal ones declare their
//! posterior mode centers for the observation `x_o = 0`.

mod builtin;
mod external;
mod mg1;
mod ricker;

pub use builtin::{CosineToy, GridMultimodal, TractableGaussian};
pub use external::{ExternalSimulator, Request, Response};
pub use mg1::{quantiles, Mg1Queue};
pub use ricker::{ricker_trajectory, Ricker, RickerTrajectory, POPULATION_CAP};

use crate::diffcore::Matrix;
use crate::losses::LikelihoodModel;
use crate::rng::stream;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("θ has {got} entries, expected {expected}")]
    ThetaDim { expected: usize, got: usize },
    #[error("θ = {theta:?} lies outside the prior box")]
    OutsideBox { theta: Vec<f64> },
    #[error("invalid simulator settings: {0}")]
    Config(String),
    #[error("could not start simulator: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("simulator did not answer within {0:?}")]
    Timeout(Duration),
    #[error("simulator exited: {0}")]
    Exited(String),
    #[error("malformed simulator response ({reason}): {raw}")]
    Malformed { raw: String, reason: String },
    #[error("simulator returned {got} outputs, expected {expected}: {raw}")]
    OutputDim { expected: usize, got: usize, raw: String },
    #[error("simulator reported an error: {0}")]
    Reported(String),
}

/// Axis-aligned prior support `[low, high]` with uniform density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl PriorBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self, SimulatorError> {
        if low.len() != high.len() || low.is_empty() {
            return Err(SimulatorError::Config("prior box bounds must be nonempty and of equal length".into()));
        }
        if low.iter().zip(&high).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(SimulatorError::Config(format!("prior box needs low < high, got {low:?} and {high:?}")));
        }
        Ok(Self { low, high })
    }

    pub fn cube(dim: usize, low: f64, high: f64) -> Self {
        Self {
            low: vec![low; dim],
            high: vec![high; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn sides(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| h - l).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && theta.iter().zip(self.low.iter().zip(&self.high)).all(|(t, (l, h))| *l <= *t && *t <= *h)
    }

    /// `ln p(θ)`: minus the log volume inside, `−∞` outside.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if self.contains(theta) {
            -self.log_volume()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn log_volume(&self) -> f64 {
        self.sides().iter().map(|s| s.ln()).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect()
    }

    pub fn sample_matrix<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Matrix {
        let data = (0..n).flat_map(|_| self.sample(rng)).collect();
        Matrix::from_vec(n, self.dim(), data)
    }

    /// Box center, the prior mean.
    pub fn center(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

/// Known posterior modes and the radius that assigns a sample to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub centers: Vec<Vec<f64>>,
    pub capture_radius: f64,
}

/// A stochastic forward map `θ ↦ x` with a uniform prior on a box.
pub trait Simulator: Send + Sync {
    fn name(&self) -> &str;

    fn prior(&self) -> &PriorBox;

    fn theta_dim(&self) -> usize {
        self.prior().dim()
    }

    fn x_dim(&self) -> usize;

    /// One draw of `x ~ p_sim(· | θ)`; a pure function of `(θ, seed)` for
    /// built-ins.
    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError>;

    /// `ln p_sim(x | θ)` when tractable.
    fn log_likelihood(&self, _x: &[f64], _theta: &[f64]) -> Option<f64> {
        None
    }

    fn is_tractable(&self) -> bool {
        false
    }

    /// Posterior modes for the default observation.
    fn modes(&self) -> Option<ModeSet> {
        None
    }

    /// The observation the simulator's modes refer to, if any.
    fn default_observation(&self) -> Option<Vec<f64>> {
        None
    }
}

fn check_theta(prior: &PriorBox, theta: &[f64]) -> Result<(), SimulatorError> {
    if theta.len() != prior.dim() {
        return Err(SimulatorError::ThetaDim {
            expected: prior.dim(),
            got: theta.len(),
        });
    }
    if !prior.contains(theta) {
        return Err(SimulatorError::OutsideBox { theta: theta.to_vec() });
    }
    Ok(())
}

/// A tractable simulator viewed as a likelihood model, for relative mutual
/// information against a neural likelihood.
pub struct SimulatorLikelihood<'a>(pub &'a dyn Simulator);

impl LikelihoodModel for SimulatorLikelihood<'_> {
    fn log_lik_many(&self, x: &[f64], thetas: &Matrix) -> Vec<f64> {
        thetas
            .row_iter()
            .map(|t| self.0.log_likelihood(x, t).expect("simulator likelihood must be tractable"))
            .collect()
    }

    fn sample_each(&self, thetas: &Matrix, rng: &mut dyn RngCore) -> Matrix {
        let data = thetas
            .row_iter()
            .flat_map(|t| self.0.simulate(t, rng.next_u64()).expect("θ from the prior box"))
            .collect();
        Matrix::from_vec(thetas.rows(), self.0.x_dim(), data)
    }
}

fn default_grid_dims() -> usize {
    2
}
fn default_grid_modes() -> usize {
    4
}
fn default_grid_output() -> usize {
    4
}
fn default_grid_sigma() -> f64 {
    0.3
}
fn default_jobs() -> usize {
    50
}
fn default_quantiles() -> usize {
    5
}
fn default_steps() -> usize {
    13
}
fn default_gaussian_dims() -> usize {
    1
}
fn default_timeout() -> f64 {
    30.0
}

/// Simulator selection by name, with per-simulator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimulatorConfig {
    CosineToy {},
    GridMultimodal {
        #[serde(default = "default_grid_dims")]
        dims: usize,
        #[serde(default = "default_grid_modes")]
        modes: usize,
        #[serde(default = "default_grid_output")]
        output_dim: usize,
        /// Noise standard deviation.
        #[serde(default = "default_grid_sigma")]
        sigma: f64,
    },
    Mg1Queue {
        #[serde(default = "default_jobs")]
        jobs: usize,
        #[serde(default = "default_quantiles")]
        quantiles: usize,
    },
    Ricker {
        #[serde(default = "default_steps")]
        steps: usize,
    },
    TractableGaussian {
        #[serde(default = "default_gaussian_dims")]
        dims: usize,
    },
    External {
        command: Vec<String>,
        x_dim: usize,
        low: Vec<f64>,
        high: Vec<f64>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

impl SimulatorConfig {
    pub fn build(&self) -> Result<Box<dyn Simulator>, SimulatorError> {
        Ok(match self {
            SimulatorConfig::CosineToy {} => Box::new(CosineToy::new()),
            SimulatorConfig::GridMultimodal {
                dims,
                modes,
                output_dim,
                sigma,
            } => Box::new(GridMultimodal::new(*dims, *modes, *output_dim, *sigma)?),
            SimulatorConfig::Mg1Queue { jobs, quantiles } => Box::new(Mg1Queue::new(*jobs, *quantiles)?),
            SimulatorConfig::Ricker { steps } => Box::new(Ricker::new(*steps)?),
            SimulatorConfig::TractableGaussian { dims } => Box::new(TractableGaussian::new(*dims)?),
            SimulatorConfig::External {
                command,
                x_dim,
                low,
                high,
                timeout_secs,
            } => {
                if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) {
                    return Err(SimulatorError::Config(format!("timeout_secs must be positive, got {timeout_secs}")));
                }
                Box::new(ExternalSimulator::new(
                    command.clone(),
                    PriorBox::new(low.clone(), high.clone())?,
                    *x_dim,
                    Duration::from_secs_f64(*timeout_secs),
                )?)
            }
        })
    }
}

/// Standard-normal draws from the stream keyed by `seed`.
fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = stream(&[seed]);
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

#[cfg(test)]
mod tests;
