use crate::config::ConfigError;
use crate::CliError;
use npr::rng::{derive_seed, purpose, stream};
use npr::simulators::SimulatorConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub theta: Vec<f64>,
    pub seed: u64,
    pub x: Vec<f64>,
}

/// One-off simulator calls: `count` outputs at `theta`, or at fresh prior
/// draws when `theta` is absent. Call `i` uses seed `derive(seed, i)`.
pub fn simulate(
    simulator: &SimulatorConfig,
    theta: Option<&[f64]>,
    seed: u64,
    count: usize,
) -> Result<Vec<SimulationRecord>, CliError> {
    let sim = simulator.build().map_err(|e| ConfigError::new("simulator", e))?;
    if let Some(t) = theta {
        if t.len() != sim.theta_dim() || !sim.prior().contains(t) {
            return Err(ConfigError::new("--theta", format!("{t:?} is not inside the prior box {:?}", sim.prior())).into());
        }
    }
    let mut prior_rng = stream(&[seed, purpose::PRIOR]);
    (0..count as u64)
        .map(|i| {
            let theta = theta.map_or_else(|| sim.prior().sample(&mut prior_rng), <[f64]>::to_vec);
            let s = derive_seed(&[seed, purpose::SIMULATE, i]);
            let x = sim
                .simulate(&theta, s)
                .map_err(|e| CliError::Runtime(format!("simulation {i} at θ = {theta:?}: {e}")))?;
            Ok(SimulationRecord { theta, seed: s, x })
        })
        .collect()
}
