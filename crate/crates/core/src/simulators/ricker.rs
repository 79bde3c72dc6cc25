use super::{check_theta, PriorBox, Simulator, SimulatorError};
use crate::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

/// Populations above this are clamped.
pub const POPULATION_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct RickerTrajectory {
    /// Observed counts `y₁..y_T`.
    pub observations: Vec<f64>,
    /// Latent populations `N₁..N_T`.
    pub populations: Vec<f64>,
    /// Some population hit [`POPULATION_CAP`].
    pub clamped: bool,
}

/// `N₀ = 1`, `N_{t+1} = r·N_t·exp(−N_t + e_t)` with `e_t ~ N(0, σ²)`, and
/// `y_t ~ Poisson(φ·N_t)`. With `poisson = false` each observation is its
/// mean `φ·N_t`.
pub fn ricker_trajectory(theta: &[f64], steps: usize, seed: u64, poisson: bool) -> RickerTrajectory {
    let (r, sigma, phi) = (theta[0].exp(), theta[1], theta[2]);
    let mut rng = stream(&[seed]);
    let mut n = 1.0f64;
    let mut clamped = false;
    let mut populations = Vec::with_capacity(steps);
    let mut observations = Vec::with_capacity(steps);
    for _ in 0..steps {
        let e: f64 = rng.sample(StandardNormal);
        n = r * n * (-n + sigma * e).exp();
        if !(n <= POPULATION_CAP) {
            n = POPULATION_CAP;
            clamped = true;
        }
        let mean = phi * n;
        let y = if !poisson {
            mean
        } else if mean > 0.0 {
            Poisson::new(mean).expect("finite positive rate").sample(&mut rng)
        } else {
            0.0
        };
        populations.push(n);
        observations.push(y);
    }
    RickerTrajectory {
        observations,
        populations,
        clamped,
    }
}

/// Ricker population dynamics with Poisson observations on
/// `(log r, σ, φ) ∈ [3, 8] × [0, 0.6] × [5, 15]`.
#[derive(Debug, Clone)]
pub struct Ricker {
    prior: PriorBox,
    steps: usize,
}

impl Ricker {
    pub fn new(steps: usize) -> Result<Self, SimulatorError> {
        if steps == 0 {
            return Err(SimulatorError::Config("need at least one step".into()));
        }
        Ok(Self {
            prior: PriorBox {
                low: vec![3.0, 0.0, 5.0],
                high: vec![8.0, 0.6, 15.0],
            },
            steps,
        })
    }
}

impl Simulator for Ricker {
    fn name(&self) -> &str {
        "ricker"
    }

    fn prior(&self) -> &PriorBox {
        &self.prior
    }

    fn x_dim(&self) -> usize {
        self.steps
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError> {
        check_theta(&self.prior, theta)?;
        Ok(ricker_trajectory(theta, self.steps, seed, true).observations)
    }
}
