use super::mcmc::{slice_sample, McmcConfig, McmcOutcome};
use super::train::{train_models, TrainConfig, TrainReport};
use super::{InferenceError, RoundDataset};
use crate::density::{ConditionalDensity, DensityConfig, DensityKind};
use crate::diffcore::Matrix;
use crate::losses::{relative_mi, LambdaSchedule};
use crate::metrics::{meddist, mmd, mode_diversity, nltp, Bandwidth, Normalization};
use crate::rng::{derive_seed, purpose, stream};
use crate::simulators::{PriorBox, Simulator, SimulatorLikelihood};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Known-mode coverage and diversity of the posterior samples.
    ModeDiversity,
    /// Likelihood-model mutual information relative to the simulator's.
    RelativeMi,
    /// Median distance of simulated outputs at posterior samples to `x_o`.
    Meddist,
    /// MMD to samples from the true-likelihood posterior.
    Mmd,
    /// Negative log posterior density at the true parameters.
    Nltp,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::ModeDiversity,
        MetricKind::RelativeMi,
        MetricKind::Meddist,
        MetricKind::Mmd,
        MetricKind::Nltp,
    ];

    /// Why the metric cannot be computed for this setup, if it cannot.
    pub fn unavailable(self, simulator: &dyn Simulator, theta_true: Option<&[f64]>) -> Option<String> {
        match self {
            MetricKind::ModeDiversity if simulator.modes().is_none() => {
                Some(format!("simulator {} has no known modes", simulator.name()))
            }
            MetricKind::RelativeMi | MetricKind::Mmd if !simulator.is_tractable() => {
                Some(format!("simulator {} has no tractable likelihood", simulator.name()))
            }
            MetricKind::Nltp if theta_true.is_none() => Some("needs theta_true".into()),
            _ => None,
        }
    }

    /// Cheap metrics available for `simulator`.
    pub fn defaults_for(simulator: &dyn Simulator) -> Vec<MetricKind> {
        [MetricKind::ModeDiversity, MetricKind::RelativeMi, MetricKind::Meddist]
            .into_iter()
            .filter(|m| m.unavailable(simulator, None).is_none())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    /// `None` selects [`MetricKind::defaults_for`].
    pub select: Option<Vec<MetricKind>>,
    /// Posterior samples drawn after each round for the metrics.
    pub posterior_samples: usize,
    pub mi_outer: usize,
    pub mi_inner: usize,
    /// Simulator calls for the median-distance metric.
    pub meddist_draws: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            select: None,
            posterior_samples: 1000,
            mi_outer: 200,
            mi_inner: 200,
            meddist_draws: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub rounds: usize,
    /// Simulations per round.
    pub budget: usize,
    pub schedule: LambdaSchedule,
    pub likelihood: DensityConfig,
    pub posterior: DensityConfig,
    pub train: TrainConfig,
    pub mcmc: McmcConfig,
    pub metrics: MetricSettings,
    /// Observed data; when absent it is simulated at `theta_true`, or the
    /// simulator's default is used.
    pub observation: Option<Vec<f64>>,
    pub theta_true: Option<Vec<f64>>,
    /// Attempts per θ before it is redrawn.
    pub simulation_attempts: usize,
    /// Redraws per θ slot before the round fails.
    pub max_redraws: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            budget: 100,
            schedule: LambdaSchedule::default_for(10),
            likelihood: DensityConfig::default(),
            posterior: DensityConfig::with_kind(DensityKind::Mixture),
            train: TrainConfig::default(),
            mcmc: McmcConfig::default(),
            metrics: MetricSettings::default(),
            observation: None,
            theta_true: None,
            simulation_attempts: 3,
            max_redraws: 10,
        }
    }
}

impl InferenceConfig {
    /// Checks everything that can be checked before simulating.
    pub fn validate(&self, simulator: &dyn Simulator) -> Result<(), InferenceError> {
        let err = |m: String| Err(InferenceError::Config(m));
        if self.rounds == 0 || self.budget == 0 {
            return err("rounds and budget must be at least 1".into());
        }
        if self.schedule.rounds != self.rounds {
            return err(format!(
                "schedule covers {} rounds but the experiment has {}",
                self.schedule.rounds, self.rounds
            ));
        }
        self.schedule.validate().map_err(|e| InferenceError::Config(e.to_string()))?;
        if !self.schedule.is_zero() && !self.likelihood.kind.reparameterizable() {
            return err(format!("a {:?} likelihood model cannot carry the penalty", self.likelihood.kind));
        }
        self.train.validate().map_err(InferenceError::Config)?;
        self.mcmc.validate().map_err(InferenceError::Config)?;
        if self.simulation_attempts == 0 {
            return err("simulation_attempts must be at least 1".into());
        }
        if self.metrics.posterior_samples < 2 {
            return err("metrics need at least 2 posterior samples".into());
        }
        if let Some(t) = &self.theta_true {
            if t.len() != simulator.theta_dim() || !simulator.prior().contains(t) {
                return err(format!("theta_true = {t:?} is not inside the prior box"));
            }
        }
        if let Some(o) = &self.observation {
            if o.len() != simulator.x_dim() {
                return err(format!("observation has {} entries, simulator outputs {}", o.len(), simulator.x_dim()));
            }
        } else if self.theta_true.is_none() && simulator.default_observation().is_none() {
            return err(format!("simulator {} needs an observation or theta_true", simulator.name()));
        }
        for m in self.selected_metrics(simulator) {
            if let Some(why) = m.unavailable(simulator, self.theta_true.as_deref()) {
                return err(format!("metric {m:?}: {why}"));
            }
        }
        Ok(())
    }

    pub fn selected_metrics(&self, simulator: &dyn Simulator) -> Vec<MetricKind> {
        self.metrics
            .select
            .clone()
            .unwrap_or_else(|| MetricKind::defaults_for(simulator))
    }

    /// The observation `x_o`. A simulated one uses a stream that does not
    /// depend on the experiment seed, so every seed sees the same data.
    pub fn resolve_observation(&self, simulator: &dyn Simulator) -> Result<Vec<f64>, InferenceError> {
        if let Some(o) = &self.observation {
            return Ok(o.clone());
        }
        if let Some(t) = &self.theta_true {
            return Ok(simulator.simulate(t, derive_seed(&[purpose::OBSERVATION]))?);
        }
        simulator
            .default_observation()
            .ok_or_else(|| InferenceError::Config("no observation available".into()))
    }
}

/// Metric values of one round; absent when not selected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub modes_covered: Option<usize>,
    pub mode_diversity: Option<f64>,
    pub off_mode_fraction: Option<f64>,
    pub relative_mi: Option<f64>,
    pub relative_mi_se: Option<f64>,
    pub meddist: Option<f64>,
    pub mmd2: Option<f64>,
    pub nltp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub seed: u64,
    pub round: usize,
    pub lambda: f64,
    pub dataset_size: usize,
    pub train: TrainReport,
    /// θ slots redrawn after repeated simulator failures.
    pub redrawn: usize,
    /// Simulator calls that failed and were retried.
    pub simulation_failures: usize,
    /// Proposals replaced by prior draws after a collapsed proposal.
    pub prior_refill: usize,
    pub mcmc_widened: bool,
    pub metrics: RoundMetrics,
}

/// Everything produced by one completed round.
#[derive(Debug, Clone)]
pub struct RoundArtifacts<'a> {
    pub record: &'a RoundRecord,
    pub posterior_samples: &'a Matrix,
    pub likelihood: &'a ConditionalDensity,
    pub posterior: &'a ConditionalDensity,
}

#[derive(Debug, Clone)]
pub struct InferenceState {
    pub psi: ConditionalDensity,
    pub phi: ConditionalDensity,
    pub dataset: RoundDataset,
    pub round: usize,
    pub config: InferenceConfig,
    pub observation: Vec<f64>,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    /// Samples of the current approximate posterior, source of the next
    /// round's proposals.
    pub posterior_samples: Option<Matrix>,
    reference_samples: Option<Vec<Vec<f64>>>,
    pending: Pending,
}

#[derive(Debug, Clone, Default)]
struct Pending {
    redrawn: usize,
    failures: usize,
    prior_refill: usize,
}

struct Simulated {
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
    redrawn: usize,
    failures: usize,
}

/// Runs the simulator on every θ. Call `j` uses the stream
/// `(seed, round, j, attempt)`; after `attempts` failures the θ is
/// replaced by a prior draw from `(seed, round, j, redraw)`.
fn simulate_all(
    simulator: &dyn Simulator,
    thetas: Vec<Vec<f64>>,
    seed: u64,
    round: usize,
    attempts: usize,
    max_redraws: usize,
) -> Result<Simulated, InferenceError> {
    let mut out = Simulated {
        pairs: Vec::with_capacity(thetas.len()),
        redrawn: 0,
        failures: 0,
    };
    for (j, mut theta) in thetas.into_iter().enumerate() {
        let key = [seed, purpose::SIMULATE, round as u64, j as u64];
        let mut redraw = 0;
        let x = 'slot: loop {
            let mut last = None;
            for attempt in 0..attempts {
                let s = derive_seed(&[key[0], key[1], key[2], key[3], redraw, attempt as u64]);
                match simulator.simulate(&theta, s) {
                    Ok(x) if x.iter().all(|v| v.is_finite()) => break 'slot x,
                    Ok(x) => last = Some(format!("non-finite output {x:?}")),
                    Err(e) => last = Some(e.to_string()),
                }
                out.failures += 1;
            }
            if redraw as usize >= max_redraws {
                return Err(InferenceError::SimulationExhausted {
                    round,
                    index: j,
                    last: last.unwrap_or_default(),
                });
            }
            redraw += 1;
            out.redrawn += 1;
            theta = simulator
                .prior()
                .sample(&mut stream(&[seed, purpose::PRIOR, round as u64, j as u64, redraw]));
        };
        out.pairs.push((theta, x));
    }
    Ok(out)
}

/// Draws from `p(θ)·q_ψ(x_o | θ)` by slice sampling, chains started at the
/// dataset entries with the highest `q_ψ(x_o | θ)`.
pub fn sample_posterior_mcmc(
    psi: &ConditionalDensity,
    prior: &PriorBox,
    observation: &[f64],
    dataset: &RoundDataset,
    n: usize,
    config: &McmcConfig,
    rng: &mut crate::rng::StreamRng,
) -> Result<McmcOutcome, InferenceError> {
    let mut target = |thetas: &Matrix| -> Result<Vec<f64>, InferenceError> {
        let inside: Vec<usize> = (0..thetas.rows()).filter(|&i| prior.contains(thetas.row(i))).collect();
        let mut out = vec![f64::NEG_INFINITY; thetas.rows()];
        if inside.is_empty() {
            return Ok(out);
        }
        let cond = thetas.select_rows(&inside);
        let events = repeat_observation(observation, inside.len());
        let values = psi.log_prob(&events, &cond)?;
        for (&i, v) in inside.iter().zip(values) {
            out[i] = if v.is_nan() { f64::NEG_INFINITY } else { v };
        }
        Ok(out)
    };
    let inits = top_entries(&mut target, dataset, config.chains)?;
    slice_sample(&mut target, prior, &inits, n, config, rng)
}

fn repeat_observation(observation: &[f64], rows: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        observation.len(),
        observation.iter().copied().cycle().take(rows * observation.len()).collect(),
    )
}

/// The `k` dataset θ with the highest target value, distinct rows first.
fn top_entries(
    target: &mut dyn FnMut(&Matrix) -> Result<Vec<f64>, InferenceError>,
    dataset: &RoundDataset,
    k: usize,
) -> Result<Matrix, InferenceError> {
    let thetas = dataset.thetas();
    let values = target(&thetas)?;
    let mut order: Vec<usize> = (0..thetas.rows()).filter(|&i| values[i].is_finite()).collect();
    if order.is_empty() {
        return Err(InferenceError::Mcmc("the target vanishes at every dataset entry".into()));
    }
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let picked: Vec<usize> = order.iter().copied().cycle().take(k).collect();
    Ok(thetas.select_rows(&picked))
}

/// `n` rows of interleaved chain output (row `t·chains + c`), spread
/// evenly over each chain's trajectory.
fn spread_rows(samples: &Matrix, chains: usize, n: usize) -> Matrix {
    let per_chain = samples.rows() / chains;
    let want = n.div_ceil(chains);
    let rows: Vec<usize> = (0..n)
        .map(|k| {
            let c = k % chains;
            let t = (k / chains) * per_chain / want;
            t * chains + c
        })
        .collect();
    samples.select_rows(&rows)
}

/// Whether the sample covariance, scaled by the prior box, is numerically
/// singular.
pub fn covariance_is_singular(samples: &Matrix, prior: &PriorBox) -> bool {
    let (n, d) = samples.shape();
    if n <= d {
        return false;
    }
    let sides = prior.sides();
    let mean: Vec<f64> = (0..d)
        .map(|k| samples.row_iter().map(|r| r[k]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in samples.row_iter() {
        for a in 0..d {
            for b in 0..=a {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]) / (sides[a] * sides[b] * (n - 1) as f64);
            }
        }
    }
    // Cholesky; a pivot at rounding level means rank deficiency
    let mut l = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in 0..=a {
            let s: f64 = (0..b).map(|k| l[a][k] * l[b][k]).sum();
            if a == b {
                let pivot = cov[a][a] - s;
                if !(pivot > 1e-12) {
                    return true;
                }
                l[a][a] = pivot.sqrt();
            } else {
                l[a][b] = (cov[a][b] - s) / l[b][b];
            }
        }
    }
    false
}

impl InferenceState {
    /// Round 1: `budget` uniform prior draws, simulated once each, and
    /// freshly initialised models. Training is left to [`Self::train`].
    pub fn initial_round(simulator: &dyn Simulator, config: InferenceConfig, seed: u64) -> Result<Self, InferenceError> {
        config.validate(simulator)?;
        let observation = config.resolve_observation(simulator)?;
        let prior = simulator.prior().clone();
        let (dt, dx) = (simulator.theta_dim(), simulator.x_dim());
        let psi = ConditionalDensity::new(config.likelihood.clone(), dx, dt, &mut stream(&[seed, purpose::INIT, 0]))?;
        let phi = ConditionalDensity::new(config.posterior.clone(), dt, dx, &mut stream(&[seed, purpose::INIT, 1]))?;
        let mut rng = stream(&[seed, purpose::PRIOR, 1]);
        let thetas: Vec<Vec<f64>> = (0..config.budget).map(|_| prior.sample(&mut rng)).collect();
        let sim = simulate_all(simulator, thetas, seed, 1, config.simulation_attempts, config.max_redraws)?;
        let mut dataset = RoundDataset::new(prior, dx);
        dataset.append_round(sim.pairs)?;
        Ok(Self {
            psi,
            phi,
            dataset,
            round: 1,
            config,
            observation,
            seed,
            records: Vec::new(),
            posterior_samples: None,
            reference_samples: None,
            pending: Pending {
                redrawn: sim.redrawn,
                failures: sim.failures,
                prior_refill: 0,
            },
        })
    }

    pub fn lambda(&self) -> Result<f64, InferenceError> {
        Ok(self.config.schedule.lambda_at(self.round)?)
    }

    /// Trains both models on the current dataset with this round's `λ`.
    pub fn train(&mut self) -> Result<TrainReport, InferenceError> {
        let lambda = self.lambda()?;
        let r = self.round as u64;
        train_models(
            &mut self.psi,
            &mut self.phi,
            &self.dataset,
            lambda,
            &self.config.train,
            &mut stream(&[self.seed, purpose::SPLIT, r]),
            &mut stream(&[self.seed, purpose::TRAIN, r]),
        )
        .map_err(|e| e.in_round(self.round))
    }

    /// Samples the current approximate posterior, computes the selected
    /// metrics and appends the round's record.
    pub fn finish_round(&mut self, simulator: &dyn Simulator, train: TrainReport) -> Result<&RoundRecord, InferenceError> {
        let r = self.round as u64;
        let want = self.config.metrics.posterior_samples.max(self.config.budget);
        let chains = self.config.mcmc.chains;
        let total = want.div_ceil(chains) * chains;
        let outcome = sample_posterior_mcmc(
            &self.psi,
            self.dataset.prior(),
            &self.observation,
            &self.dataset,
            total,
            &self.config.mcmc,
            &mut stream(&[self.seed, purpose::MCMC, r]),
        )
        .map_err(|e| e.in_round(self.round))?;
        let metric_samples = spread_rows(&outcome.samples, chains, self.config.metrics.posterior_samples);
        let metrics = self.compute_metrics(simulator, &metric_samples)?;
        self.posterior_samples = Some(outcome.samples);
        let pending = std::mem::take(&mut self.pending);
        self.records.push(RoundRecord {
            seed: self.seed,
            round: self.round,
            lambda: train.lambda,
            dataset_size: self.dataset.len(),
            train,
            redrawn: pending.redrawn,
            simulation_failures: pending.failures,
            prior_refill: pending.prior_refill,
            mcmc_widened: outcome.widened,
            metrics,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    /// The posterior samples reported for the latest round.
    pub fn reported_samples(&self) -> Option<Matrix> {
        let s = self.posterior_samples.as_ref()?;
        Some(spread_rows(s, self.config.mcmc.chains, self.config.metrics.posterior_samples))
    }

    fn compute_metrics(&mut self, simulator: &dyn Simulator, samples: &Matrix) -> Result<RoundMetrics, InferenceError> {
        let r = self.round as u64;
        let mut out = RoundMetrics::default();
        let rows: Vec<Vec<f64>> = samples.row_iter().map(<[f64]>::to_vec).collect();
        for kind in self.config.selected_metrics(simulator) {
            let mut rng = stream(&[self.seed, purpose::METRICS, r, kind as u64]);
            match kind {
                MetricKind::ModeDiversity => {
                    let modes = simulator.modes().ok_or_else(|| InferenceError::Config("no modes".into()))?;
                    let d = mode_diversity(&rows, &modes)?;
                    out.modes_covered = Some(d.covered);
                    out.mode_diversity = Some(d.score);
                    out.off_mode_fraction = Some(d.off_mode as f64 / rows.len() as f64);
                }
                MetricKind::RelativeMi => {
                    let pool = self.dataset.thetas();
                    let m = relative_mi(
                        &self.psi,
                        &SimulatorLikelihood(simulator),
                        &pool,
                        self.config.metrics.mi_outer,
                        self.config.metrics.mi_inner,
                        &mut rng,
                    );
                    out.relative_mi = Some(m.value);
                    out.relative_mi_se = Some(m.std_error);
                }
                MetricKind::Meddist => {
                    let n = self.config.metrics.meddist_draws.min(rows.len()).max(1);
                    let mut outputs = Vec::with_capacity(n);
                    for (j, theta) in rows.iter().take(n).enumerate() {
                        let s = derive_seed(&[self.seed, purpose::METRICS, r, j as u64]);
                        if let Ok(x) = simulator.simulate(theta, s) {
                            outputs.push(x);
                        }
                    }
                    out.meddist = Some(if outputs.is_empty() {
                        f64::NAN
                    } else {
                        meddist(&outputs, &self.observation)?
                    });
                }
                MetricKind::Mmd => {
                    let reference = self.reference_samples(simulator, rows.len())?;
                    out.mmd2 = Some(mmd(&rows, &reference, Bandwidth::Median)?.mmd2);
                }
                MetricKind::Nltp => {
                    let truth = self
                        .config
                        .theta_true
                        .clone()
                        .ok_or_else(|| InferenceError::Config("nltp needs theta_true".into()))?;
                    let prior = self.dataset.prior().clone();
                    let psi = &self.psi;
                    let x = Matrix::row_vector(&self.observation);
                    let density = |t: &[f64]| {
                        if !prior.contains(t) {
                            return f64::NEG_INFINITY;
                        }
                        psi.log_prob(&x, &Matrix::row_vector(t))
                            .map(|v| v[0])
                            .unwrap_or(f64::NEG_INFINITY)
                    };
                    out.nltp = Some(nltp(&density, &prior, &truth, Normalization::Auto, &mut rng)?.value);
                }
            }
        }
        Ok(out)
    }

    /// Slice-sampled draws from the true-likelihood posterior; computed once
    /// per state from a seed-independent stream.
    fn reference_samples(&mut self, simulator: &dyn Simulator, n: usize) -> Result<Vec<Vec<f64>>, InferenceError> {
        if let Some(s) = &self.reference_samples {
            if s.len() == n {
                return Ok(s.clone());
            }
        }
        let prior = self.dataset.prior().clone();
        let obs = self.observation.clone();
        let mut target = |thetas: &Matrix| -> Result<Vec<f64>, InferenceError> {
            Ok(thetas
                .row_iter()
                .map(|t| {
                    if prior.contains(t) {
                        simulator.log_likelihood(&obs, t).unwrap_or(f64::NEG_INFINITY)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect())
        };
        let inits = top_entries(&mut target, &self.dataset, self.config.mcmc.chains)?;
        let chains = self.config.mcmc.chains;
        let total = n.div_ceil(chains) * chains;
        let out = slice_sample(
            &mut target,
            &prior,
            &inits,
            total,
            &self.config.mcmc,
            &mut stream(&[purpose::METRICS, purpose::MCMC]),
        )?;
        let rows: Vec<Vec<f64>> = spread_rows(&out.samples, chains, n)
            .row_iter()
            .map(<[f64]>::to_vec)
            .collect();
        self.reference_samples = Some(rows.clone());
        Ok(rows)
    }

    /// Next round: `budget` proposals from the latest posterior samples,
    /// simulated and appended; then retrains and records metrics.
    pub fn run_round(&mut self, simulator: &dyn Simulator) -> Result<&RoundRecord, InferenceError> {
        if self.round >= self.config.rounds {
            return Err(InferenceError::Config(format!("all {} rounds are done", self.config.rounds)));
        }
        let samples = self
            .posterior_samples
            .as_ref()
            .ok_or_else(|| InferenceError::Config("finish the current round before starting the next".into()))?;
        let next = self.round + 1;
        let n = self.config.budget;
        let mut proposals = spread_rows(samples, self.config.mcmc.chains, n);
        let mut refill = 0;
        if covariance_is_singular(&proposals, self.dataset.prior()) {
            refill = n.div_ceil(10);
            let mut rng = stream(&[self.seed, purpose::PRIOR, next as u64, u64::MAX]);
            for i in n - refill..n {
                let t = self.dataset.prior().sample(&mut rng);
                proposals.row_mut(i).copy_from_slice(&t);
            }
        }
        let thetas: Vec<Vec<f64>> = proposals.row_iter().map(<[f64]>::to_vec).collect();
        let sim = simulate_all(
            simulator,
            thetas,
            self.seed,
            next,
            self.config.simulation_attempts,
            self.config.max_redraws,
        )?;
        self.dataset.append_round(sim.pairs)?;
        self.round = next;
        self.pending = Pending {
            redrawn: sim.redrawn,
            failures: sim.failures,
            prior_refill: refill,
        };
        let report = self.train()?;
        self.finish_round(simulator, report)
    }
}

/// All rounds for one seed. `on_round` sees every completed round.
pub fn run_seed(
    simulator: &dyn Simulator,
    config: &InferenceConfig,
    seed: u64,
    on_round: &mut dyn FnMut(RoundArtifacts<'_>),
) -> Result<Vec<RoundRecord>, InferenceError> {
    let mut state = InferenceState::initial_round(simulator, config.clone(), seed)?;
    let report = state.train()?;
    state.finish_round(simulator, report)?;
    emit(&state, on_round);
    while state.round < config.rounds {
        state.run_round(simulator)?;
        emit(&state, on_round);
    }
    Ok(state.records)
}

fn emit(state: &InferenceState, on_round: &mut dyn FnMut(RoundArtifacts<'_>)) {
    let samples = state.reported_samples().expect("finished round has samples");
    on_round(RoundArtifacts {
        record: state.records.last().expect("finished round has a record"),
        posterior_samples: &samples,
        likelihood: &state.psi,
        posterior: &state.phi,
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub round: Option<usize>,
    /// Message without the round.
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    /// Rows ordered by seed (in the order given), then round.
    pub records: Vec<RoundRecord>,
    pub failures: Vec<SeedFailure>,
}

/// Runs every seed, up to `workers` at a time. A failed seed is recorded
/// and skipped; the experiment fails only when every seed fails. Results
/// do not depend on `workers`.
pub fn run_experiment(
    simulator: &dyn Simulator,
    config: &InferenceConfig,
    seeds: &[u64],
    workers: usize,
    on_round: &(dyn Fn(RoundArtifacts<'_>) + Sync),
) -> Result<ExperimentOutcome, InferenceError> {
    config.validate(simulator)?;
    if seeds.is_empty() {
        return Err(InferenceError::Config("need at least one seed".into()));
    }
    let workers = workers.clamp(1, seeds.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<Result<Vec<RoundRecord>, InferenceError>>>> =
        seeds.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let r = run_seed(simulator, config, seeds[i], &mut |a| on_round(a));
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    let mut outcome = ExperimentOutcome {
        records: Vec::new(),
        failures: Vec::new(),
    };
    for (seed, slot) in seeds.iter().zip(results) {
        match slot.into_inner().expect("result slot").expect("every seed ran") {
            Ok(records) => outcome.records.extend(records),
            Err(e) => outcome.failures.push(SeedFailure {
                seed: *seed,
                round: e.round(),
                error: e.detail(),
            }),
        }
    }
    if outcome.failures.len() == seeds.len() {
        return Err(InferenceError::AllSeedsFailed(outcome.failures));
    }
    Ok(outcome)
}
