use super::{check_theta, PriorBox, Simulator, SimulatorError};
use crate::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, Exp};

/// `levels` equally spaced empirical quantiles at `i/(levels − 1)` with
/// linear interpolation between order statistics; a single level is the
/// median.
pub fn quantiles(values: &[f64], levels: usize) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    if levels == 1 {
        return vec![at(0.5)];
    }
    (0..levels).map(|i| at(i as f64 / (levels - 1) as f64)).collect()
}

/// Single-server first-come-first-served queue. Service times are
/// `U[θ₁, θ₁ + θ₂]`, inter-arrival times `Exp(θ₃)`; the output is the
/// quantiles of the inter-departure times.
#[derive(Debug, Clone)]
pub struct Mg1Queue {
    prior: PriorBox,
    jobs: usize,
    levels: usize,
}

/// An arrival rate of exactly zero would put every arrival at infinity.
const MIN_RATE: f64 = 1e-9;

impl Mg1Queue {
    pub fn new(jobs: usize, levels: usize) -> Result<Self, SimulatorError> {
        if jobs < 2 || levels == 0 {
            return Err(SimulatorError::Config(format!(
                "need at least 2 jobs and 1 quantile, got {jobs} and {levels}"
            )));
        }
        Ok(Self {
            prior: PriorBox {
                low: vec![0.0, 0.0, 0.0],
                high: vec![10.0, 10.0, 1.0 / 3.0],
            },
            jobs,
            levels,
        })
    }

    /// Inter-departure times from the Lindley recursion
    /// `Dᵢ = max(Aᵢ, Dᵢ₋₁) + Sᵢ`.
    pub fn inter_departures(&self, theta: &[f64], seed: u64) -> Vec<f64> {
        let mut rng = stream(&[seed]);
        let arrivals = Exp::new(theta[2].max(MIN_RATE)).expect("positive rate");
        let mut arrival = 0.0;
        let mut departure: f64 = 0.0;
        (0..self.jobs)
            .map(|_| {
                arrival += arrivals.sample(&mut rng);
                let service = theta[0] + theta[1] * rng.random::<f64>();
                let next = arrival.max(departure) + service;
                let gap = next - departure;
                departure = next;
                gap
            })
            .collect()
    }
}

impl Simulator for Mg1Queue {
    fn name(&self) -> &str {
        "mg1_queue"
    }

    fn prior(&self) -> &PriorBox {
        &self.prior
    }

    fn x_dim(&self) -> usize {
        self.levels
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError> {
        check_theta(&self.prior, theta)?;
        Ok(quantiles(&self.inter_departures(theta, seed), self.levels))
    }
}
