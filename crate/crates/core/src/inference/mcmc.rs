use super::InferenceError;
use crate::diffcore::Matrix;
use crate::simulators::PriorBox;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub chains: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th state after burn-in.
    pub thin: usize,
    /// Initial slice width as a fraction of each prior-box side.
    pub width_fraction: f64,
    pub max_step_out: usize,
    pub max_shrink: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 10,
            burn_in: 200,
            thin: 1,
            width_fraction: 0.1,
            max_step_out: 20,
            max_shrink: 100,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.chains == 0 || self.thin == 0 {
            return Err("chains and thin must be positive".into());
        }
        if !(self.width_fraction > 0.0 && self.width_fraction.is_finite()) {
            return Err(format!("width_fraction must be positive, got {}", self.width_fraction));
        }
        if self.max_shrink == 0 {
            return Err("max_shrink must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcOutcome {
    /// Draws interleaved across chains.
    pub samples: Matrix,
    /// Post-burn-in coordinate updates that moved, per chain.
    pub moves: Vec<usize>,
    /// Target evaluations, counted per row.
    pub evaluations: usize,
    /// Slice width was widened after every chain stalled.
    pub widened: bool,
}

/// Log density evaluated on a batch of rows; `−∞` marks zero density.
pub type BatchLogDensity<'a> = dyn FnMut(&Matrix) -> Result<Vec<f64>, InferenceError> + 'a;

enum Phase {
    StepOut { left_open: bool, right_open: bool, steps: usize },
    Shrink { tries: usize },
    Done,
}

struct Chain {
    x: Vec<f64>,
    log_f: f64,
    level: f64,
    left: f64,
    right: f64,
    candidate: f64,
    phase: Phase,
}

/// Axis-aligned slice sampling inside `prior`, all chains in lock step so
/// that each step evaluates the target once on a batch.
pub fn slice_sample<R: Rng + ?Sized>(
    log_target: &mut BatchLogDensity<'_>,
    prior: &PriorBox,
    inits: &Matrix,
    n: usize,
    config: &McmcConfig,
    rng: &mut R,
) -> Result<McmcOutcome, InferenceError> {
    config.validate().map_err(InferenceError::Config)?;
    let first = run(log_target, prior, inits, n, config, config.width_fraction, rng)?;
    if n == 0 || first.moves.iter().any(|m| *m > 0) {
        return Ok(first);
    }
    let second = run(log_target, prior, inits, n, config, config.width_fraction * 10.0, rng)?;
    if second.moves.iter().all(|m| *m == 0) {
        return Err(InferenceError::Mcmc("every chain stalled, also after widening the slice".into()));
    }
    Ok(McmcOutcome {
        widened: true,
        evaluations: first.evaluations + second.evaluations,
        ..second
    })
}

fn run<R: Rng + ?Sized>(
    log_target: &mut BatchLogDensity<'_>,
    prior: &PriorBox,
    inits: &Matrix,
    n: usize,
    config: &McmcConfig,
    width_fraction: f64,
    rng: &mut R,
) -> Result<McmcOutcome, InferenceError> {
    let d = prior.dim();
    if inits.rows() == 0 || inits.cols() != d {
        return Err(InferenceError::Mcmc(format!("need chain starts with {d} columns, got {:?}", inits.shape())));
    }
    let c = inits.rows();
    let init_logs = log_target(inits)?;
    let mut evaluations = c;
    let mut chains: Vec<Chain> = inits
        .row_iter()
        .zip(&init_logs)
        .map(|(x, &log_f)| Chain {
            x: x.to_vec(),
            log_f,
            level: 0.0,
            left: 0.0,
            right: 0.0,
            candidate: 0.0,
            phase: Phase::Done,
        })
        .collect();
    if let Some(i) = chains.iter().position(|ch| !ch.log_f.is_finite() || !prior.contains(&ch.x)) {
        return Err(InferenceError::Mcmc(format!("chain {i} starts where the target is zero")));
    }
    let widths: Vec<f64> = prior.sides().iter().map(|s| s * width_fraction).collect();
    let per_chain = n.div_ceil(c);
    let iterations = config.burn_in + per_chain * config.thin;
    let mut kept: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(per_chain); c];
    let mut moves = vec![0usize; c];

    for it in 0..iterations {
        for k in 0..d {
            let (lo, hi, w) = (prior.low[k], prior.high[k], widths[k]);
            for ch in chains.iter_mut() {
                let e: f64 = rng.sample(Exp1);
                ch.level = ch.log_f - e;
                let u: f64 = rng.random();
                ch.left = (ch.x[k] - w * u).max(lo);
                ch.right = (ch.x[k] - w * u + w).min(hi);
                ch.phase = Phase::StepOut {
                    left_open: ch.left > lo,
                    right_open: ch.right < hi,
                    steps: 0,
                };
            }
            loop {
                // rows to evaluate: (chain, which end or candidate, coordinate value)
                let mut requests: Vec<(usize, u8, f64)> = Vec::new();
                for (i, ch) in chains.iter_mut().enumerate() {
                    match ch.phase {
                        Phase::StepOut { left_open, right_open, .. } if left_open || right_open => {
                            if left_open {
                                requests.push((i, 0, ch.left));
                            }
                            if right_open {
                                requests.push((i, 1, ch.right));
                            }
                        }
                        Phase::StepOut { .. } => {
                            ch.phase = Phase::Shrink { tries: 0 };
                            ch.candidate = ch.left + (ch.right - ch.left) * rng.random::<f64>();
                            requests.push((i, 2, ch.candidate));
                        }
                        Phase::Shrink { .. } => requests.push((i, 2, ch.candidate)),
                        Phase::Done => {}
                    }
                }
                if requests.is_empty() {
                    break;
                }
                let mut rows = Vec::with_capacity(requests.len() * d);
                for &(i, _, v) in &requests {
                    let mut x = chains[i].x.clone();
                    x[k] = v;
                    rows.extend(x);
                }
                let values = log_target(&Matrix::from_vec(requests.len(), d, rows))?;
                evaluations += requests.len();
                // step-out results first, so both ends of a chain update together
                let mut extend = vec![(false, false); c];
                for (&(i, what, v), &lf) in requests.iter().zip(&values) {
                    let ch = &mut chains[i];
                    match what {
                        0 => extend[i].0 = lf > ch.level,
                        1 => extend[i].1 = lf > ch.level,
                        _ => {
                            let tries = match ch.phase {
                                Phase::Shrink { tries } => tries + 1,
                                _ => 1,
                            };
                            if lf > ch.level {
                                if v != ch.x[k] && it >= config.burn_in {
                                    moves[i] += 1;
                                }
                                ch.x[k] = v;
                                ch.log_f = lf;
                                ch.phase = Phase::Done;
                            } else if tries >= config.max_shrink {
                                ch.phase = Phase::Done;
                            } else {
                                if v < ch.x[k] {
                                    ch.left = v;
                                } else {
                                    ch.right = v;
                                }
                                ch.candidate = ch.left + (ch.right - ch.left) * rng.random::<f64>();
                                ch.phase = Phase::Shrink { tries };
                            }
                        }
                    }
                }
                for (i, ch) in chains.iter_mut().enumerate() {
                    if let Phase::StepOut { left_open, right_open, steps } = ch.phase {
                        let steps = steps + 1;
                        let l_open = left_open && extend[i].0 && steps < config.max_step_out;
                        let r_open = right_open && extend[i].1 && steps < config.max_step_out;
                        if l_open {
                            ch.left = (ch.left - w).max(lo);
                        }
                        if r_open {
                            ch.right = (ch.right + w).min(hi);
                        }
                        // an end pinned at the box boundary needs no evaluation:
                        // the target vanishes beyond it
                        let l_open = l_open && ch.left > lo;
                        let r_open = r_open && ch.right < hi;
                        ch.phase = Phase::StepOut {
                            left_open: l_open,
                            right_open: r_open,
                            steps,
                        };
                    }
                }
            }
        }
        if it >= config.burn_in && (it - config.burn_in) % config.thin == config.thin - 1 {
            for (i, ch) in chains.iter().enumerate() {
                kept[i].push(ch.x.clone());
            }
        }
    }
    let mut data = Vec::with_capacity(n * d);
    'outer: for j in 0..per_chain {
        for chain in &kept {
            if data.len() == n * d {
                break 'outer;
            }
            data.extend_from_slice(&chain[j]);
        }
    }
    Ok(McmcOutcome {
        samples: Matrix::from_vec(n, d, data),
        moves,
        evaluations,
        widened: false,
    })
}
