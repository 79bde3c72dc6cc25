use super::*;
use crate::density::{ConditionalDensity, DensityConfig, DensityKind};
use crate::diffcore::Matrix;
use crate::losses::{relative_mi, LambdaSchedule};
use crate::rng::stream;
use crate::simulators::{CosineToy, PriorBox, Simulator, SimulatorError, SimulatorLikelihood, TractableGaussian};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

fn small_flow() -> DensityConfig {
    DensityConfig {
        hidden: 16,
        flow_layers: 2,
        ..DensityConfig::default()
    }
}

fn quick(rounds: usize, budget: usize, lambda0: f64) -> InferenceConfig {
    InferenceConfig {
        rounds,
        budget,
        schedule: if lambda0 == 0.0 {
            LambdaSchedule::constant(0.0, rounds)
        } else {
            LambdaSchedule::exponential_to(lambda0, 0.01, rounds)
        },
        likelihood: small_flow(),
        posterior: DensityConfig {
            kind: DensityKind::Mixture,
            hidden: 16,
            components: 3,
            ..DensityConfig::default()
        },
        train: TrainConfig {
            max_epochs: 4,
            patience: 2,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        },
        mcmc: McmcConfig {
            burn_in: 20,
            ..McmcConfig::default()
        },
        metrics: MetricSettings {
            select: Some(vec![MetricKind::ModeDiversity]),
            posterior_samples: 50,
            ..MetricSettings::default()
        },
        ..InferenceConfig::default()
    }
}

fn ks_uniform(mut v: Vec<f64>, low: f64, high: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = (x - low) / (high - low);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn column(m: &Matrix, k: usize) -> Vec<f64> {
    m.row_iter().map(|r| r[k]).collect()
}

#[test]
fn initial_round_draws_the_budget_from_the_prior() {
    let sim = CosineToy::new();
    let s = InferenceState::initial_round(&sim, quick(1, 100, 0.0), 3).unwrap();
    assert_eq!(s.dataset.len(), 100);
    assert_eq!(s.round, 1);
    assert!(s.dataset.entries().iter().all(|e| sim.prior().contains(&e.theta) && e.round == 1));
    let again = InferenceState::initial_round(&sim, quick(1, 100, 0.0), 3).unwrap();
    assert_eq!(s.dataset, again.dataset);
    let other = InferenceState::initial_round(&sim, quick(1, 100, 0.0), 4).unwrap();
    assert_ne!(s.dataset, other.dataset);
    let one = InferenceState::initial_round(&sim, quick(1, 1, 0.0), 3).unwrap();
    assert_eq!((one.dataset.len(), one.round), (1, 1));
}

#[test]
fn dataset_rounds_are_contiguous_and_inside_the_box() {
    let mut d = RoundDataset::new(PriorBox::cube(1, 0.0, 1.0), 1);
    assert_eq!(d.rounds(), 0);
    assert!(d.append_round(vec![]).is_err());
    assert!(d.append_round(vec![(vec![1.5], vec![0.0])]).is_err());
    assert!(d.append_round(vec![(vec![0.5], vec![f64::NAN])]).is_err());
    assert!(d.append_round(vec![(vec![0.5], vec![0.0, 1.0])]).is_err());
    assert_eq!(d.append_round(vec![(vec![0.5], vec![0.0]); 3]).unwrap(), 1);
    assert_eq!(d.append_round(vec![(vec![0.1], vec![2.0]); 2]).unwrap(), 2);
    assert_eq!(d.round_counts(), vec![3, 2]);
    assert_eq!(d.round_tags(), vec![1, 1, 1, 2, 2]);
    assert_eq!(d.thetas().shape(), (5, 1));
}

#[test]
fn validation_split_is_reproducible() {
    let (t, v) = split_indices(100, 0.1, &mut stream(&[1]));
    assert_eq!((t.len(), v.len()), (90, 10));
    let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
    all.sort();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
    assert_eq!((t.clone(), v.clone()), split_indices(100, 0.1, &mut stream(&[1])));
    assert_ne!(v, split_indices(100, 0.1, &mut stream(&[2])).1);
    assert_eq!(split_indices(1, 0.1, &mut stream(&[1])), (vec![0], vec![0]));
    assert_eq!(split_indices(5, 0.0, &mut stream(&[1])).1.len(), 1);
}

#[test]
fn batches_sample_entries_uniformly_across_rounds() {
    // rounds of unequal size: uniform over entries means tags in
    // proportion to round sizes
    let mut d = RoundDataset::new(PriorBox::cube(1, 0.0, 1.0), 1);
    for (r, n) in [(0.1, 300), (0.5, 100), (0.9, 200)] {
        d.append_round(vec![(vec![r], vec![0.0]); n]).unwrap();
    }
    let tags = d.round_tags();
    let mut rng = stream(&[9]);
    let (train, _) = split_indices(d.len(), 0.1, &mut rng);
    let mut expected = [0.0; 3];
    for &i in &train {
        expected[tags[i] - 1] += 1.0;
    }
    let mut observed = [0.0; 3];
    let mut draws = 0.0;
    for _ in 0..50 {
        // the first batch of each epoch is a uniform subsample
        let b = &minibatches(&train, 50, &mut rng)[0];
        for &i in b {
            observed[tags[i] - 1] += 1.0;
        }
        draws += b.len() as f64;
    }
    let total: f64 = expected.iter().sum();
    let chi2: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| {
            let e = e / total * draws;
            (o - e).powi(2) / e
        })
        .sum();
    let p = ChiSquared::new(2.0).unwrap().sf(chi2);
    assert!(p > 1e-3, "χ² = {chi2}, p = {p}");
}

#[test]
fn slice_sampler_on_a_constant_target_is_uniform() {
    let prior = PriorBox::new(vec![0.0, -2.0], vec![1.0, 3.0]).unwrap();
    let mut flat = |m: &Matrix| Ok(vec![0.0; m.rows()]);
    let inits = Matrix::from_rows(&vec![vec![0.5, 0.5]; 10]);
    let out = slice_sample(&mut flat, &prior, &inits, 10_000, &McmcConfig::default(), &mut stream(&[1])).unwrap();
    assert_eq!(out.samples.shape(), (10_000, 2));
    for k in 0..2 {
        let ks = ks_uniform(column(&out.samples, k), prior.low[k], prior.high[k]);
        assert!(ks < 0.02, "dimension {k}: KS = {ks}");
    }
}

#[test]
fn slice_sampler_matches_a_truncated_normal() {
    let prior = PriorBox::cube(1, -5.0, 5.0);
    let mut target = |m: &Matrix| Ok(m.row_iter().map(|t| -0.5 * t[0] * t[0]).collect());
    let inits = Matrix::from_rows(&vec![vec![1.0]; 10]);
    let n = 10_000;
    let out = slice_sample(&mut target, &prior, &inits, n, &McmcConfig::default(), &mut stream(&[11])).unwrap();
    let v = column(&out.samples, 0);
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // truncated-normal variance on [−5, 5]: 1 − 2·5·φ(5)/(1 − 2Φ(−5))
    let z = Normal::new(0.0, 1.0).unwrap();
    let pdf5 = (-12.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let exact = 1.0 - 10.0 * pdf5 / (1.0 - 2.0 * z.cdf(-5.0));
    assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
    assert!((var / exact - 1.0).abs() < 0.05, "variance {var} vs {exact}");
}

#[test]
fn slice_sampler_leaves_its_target_invariant() {
    // 20-bin histogram against quadrature bin masses of a bumpy density
    let prior = PriorBox::cube(1, 0.0, 1.0);
    let f = |t: f64| 1.0 + 0.8 * (6.0 * std::f64::consts::PI * t).sin() + 2.0 * (-(t - 0.8f64).powi(2) / 0.002).exp();
    let mut target = |m: &Matrix| Ok(m.row_iter().map(|t| f(t[0]).ln()).collect());
    let inits = Matrix::from_rows(&(0..10).map(|i| vec![(i as f64 + 0.5) / 10.0]).collect::<Vec<_>>());
    let n = 100_000;
    let out = slice_sample(&mut target, &prior, &inits, n, &McmcConfig::default(), &mut stream(&[12])).unwrap();
    let bins = 20;
    let mut hist = vec![0.0; bins];
    for t in column(&out.samples, 0) {
        hist[((t * bins as f64) as usize).min(bins - 1)] += 1.0 / n as f64;
    }
    let fine = 200_000;
    let mut mass = vec![0.0; bins];
    for i in 0..fine {
        let t = (i as f64 + 0.5) / fine as f64;
        mass[(t * bins as f64) as usize] += f(t);
    }
    let z: f64 = mass.iter().sum();
    let tv: f64 = hist.iter().zip(&mass).map(|(h, m)| (h - m / z).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.05, "TV = {tv}");
}

#[test]
fn slice_sampler_finds_the_cosine_modes_under_the_true_likelihood() {
    let sim = CosineToy::new();
    let x_o = sim.default_observation().unwrap();
    let prior = sim.prior().clone();
    let mut target = |m: &Matrix| -> Result<Vec<f64>, InferenceError> {
        Ok(m.row_iter()
            .map(|t| sim.log_likelihood(&x_o, t).unwrap())
            .collect())
    };
    // chains start at the best of 100 prior draws, as in a first round
    let mut rng = stream(&[13]);
    let pool = prior.sample_matrix(100, &mut rng);
    let scores = target(&pool).unwrap();
    let mut order: Vec<usize> = (0..100).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let inits = pool.select_rows(&order[..10]);
    let out = slice_sample(&mut target, &prior, &inits, 10_000, &McmcConfig::default(), &mut rng).unwrap();
    let rows: Vec<Vec<f64>> = out.samples.row_iter().map(<[f64]>::to_vec).collect();
    let d = crate::metrics::mode_diversity(&rows, &sim.modes().unwrap()).unwrap();
    assert!(d.covered >= 24, "{d:?}");
}

#[test]
fn slice_sampler_rejects_bad_starts_and_widens_stalled_chains() {
    let prior = PriorBox::cube(1, 0.0, 1.0);
    let mut target = |m: &Matrix| Ok(m.row_iter().map(|t| if t[0] < 0.5 { 0.0 } else { f64::NEG_INFINITY }).collect());
    let bad = Matrix::from_rows(&[[0.7]]);
    assert!(slice_sample(&mut target, &prior, &bad, 10, &McmcConfig::default(), &mut stream(&[14])).is_err());
    // a shrink budget of one attempt leaves narrow-slice chains stuck
    let spike = |t: f64| if (t - 0.5).abs() < 1e-9 { 0.0 } else { -1e9 };
    let mut spiky = |m: &Matrix| Ok(m.row_iter().map(|t| spike(t[0])).collect());
    let cfg = McmcConfig {
        max_shrink: 1,
        burn_in: 5,
        ..McmcConfig::default()
    };
    let at = Matrix::from_rows(&vec![vec![0.5]; 10]);
    let r = slice_sample(&mut spiky, &prior, &at, 20, &cfg, &mut stream(&[15]));
    assert!(matches!(r, Err(InferenceError::Mcmc(_))), "{r:?}");
}

#[test]
fn collapsed_proposals_are_detected() {
    let prior = PriorBox::cube(2, 0.0, 1.0);
    let line = Matrix::from_rows(&(0..20).map(|i| vec![i as f64 / 20.0, i as f64 / 20.0]).collect::<Vec<_>>());
    assert!(covariance_is_singular(&line, &prior));
    assert!(covariance_is_singular(&Matrix::from_rows(&vec![vec![0.3, 0.3]; 20]), &prior));
    let spread = prior.sample_matrix(20, &mut stream(&[16]));
    assert!(!covariance_is_singular(&spread, &prior));
    assert!(!covariance_is_singular(&line.select_rows(&[0, 1]), &prior));
}

#[test]
fn collapsed_posterior_refills_a_tenth_from_the_prior() {
    let sim = CosineToy::new();
    let mut s = InferenceState::initial_round(&sim, quick(2, 30, 0.0), 5).unwrap();
    let report = s.train().unwrap();
    s.finish_round(&sim, report).unwrap();
    let n = s.posterior_samples.as_ref().unwrap().rows();
    s.posterior_samples = Some(Matrix::from_rows(&vec![vec![0.3, 0.7]; n]));
    let rec = s.run_round(&sim).unwrap();
    assert_eq!(rec.prior_refill, 3);
    let second: Vec<&crate::inference::Entry> = s.dataset.entries().iter().filter(|e| e.round == 2).collect();
    assert_eq!(second.iter().filter(|e| e.theta == vec![0.3, 0.7]).count(), 27);
}

#[test]
fn rounds_accumulate_the_budget() {
    let sim = CosineToy::new();
    let mut s = InferenceState::initial_round(&sim, quick(3, 40, 1.0), 6).unwrap();
    let report = s.train().unwrap();
    assert!(report.phi_trained && report.penalty.is_some());
    s.finish_round(&sim, report).unwrap();
    for r in 2..=3 {
        let rec = s.run_round(&sim).unwrap();
        assert_eq!((rec.round, rec.dataset_size), (r, 40 * r));
        assert_eq!(s.dataset.len(), 40 * r);
    }
    assert!(s.dataset.entries().iter().all(|e| sim.prior().contains(&e.theta)));
    assert_eq!(s.dataset.round_counts(), vec![40; 3]);
    assert!(s.run_round(&sim).is_err(), "no round past the configured count");
    let lambdas: Vec<f64> = s.records.iter().map(|r| r.lambda).collect();
    assert!((lambdas[0] - 1.0).abs() < 1e-12 && (lambdas[2] - 0.01).abs() < 1e-12);
}

#[test]
fn zero_lambda_is_plain_likelihood_training() {
    let sim = CosineToy::new();
    let s = InferenceState::initial_round(&sim, quick(1, 60, 0.0), 7).unwrap();
    let cfg = quick(1, 60, 0.0).train;
    let run = |phi_seed: u64| {
        let mut psi = s.psi.clone();
        let mut phi = ConditionalDensity::new(s.config.posterior.clone(), 2, 2, &mut stream(&[phi_seed])).unwrap();
        let before = phi.clone();
        let r = train_models(&mut psi, &mut phi, &s.dataset, 0.0, &cfg, &mut stream(&[1]), &mut stream(&[2])).unwrap();
        assert!(!r.phi_trained && r.penalty.is_none());
        assert_eq!(phi.params(), before.params());
        psi
    };
    // the posterior model has no influence on the result
    assert_eq!(run(1).params(), run(2).params());
}

#[test]
fn restored_snapshot_is_never_worse_than_the_last_epoch() {
    let sim = CosineToy::new();
    for seed in 0..3 {
        let s = InferenceState::initial_round(&sim, quick(1, 100, 0.0), seed).unwrap();
        let mut psi = s.psi.clone();
        let mut phi = s.phi.clone();
        let cfg = TrainConfig {
            max_epochs: 40,
            patience: 5,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        };
        let r = train_models(&mut psi, &mut phi, &s.dataset, 0.0, &cfg, &mut stream(&[seed, 1]), &mut stream(&[2])).unwrap();
        assert!(r.val_loss <= r.final_val_loss);
        assert!(r.best_epoch >= 1 && r.best_epoch <= r.epochs);
        let (_, val) = split_indices(s.dataset.len(), 0.1, &mut stream(&[seed, 1]));
        let again = validation_loss(&psi, &s.dataset.thetas(), &s.dataset.xs(), &val).unwrap();
        assert!((again - r.val_loss).abs() < 1e-12);
    }
}

#[test]
fn regularized_training_needs_a_reparameterizable_likelihood() {
    let sim = CosineToy::new();
    let mut cfg = quick(2, 20, 1.0);
    cfg.likelihood.kind = DensityKind::Mixture;
    assert!(matches!(cfg.validate(&sim), Err(InferenceError::Config(_))));
    cfg.schedule = LambdaSchedule::constant(0.0, 2);
    assert!(cfg.validate(&sim).is_ok());
}

fn gaussian_dataset(n: usize, seed: u64) -> (TractableGaussian, RoundDataset) {
    let sim = TractableGaussian::new(1).unwrap();
    let mut rng = stream(&[seed]);
    let pairs = (0..n)
        .map(|i| {
            let t = sim.prior().sample(&mut rng);
            let x = sim.simulate(&t, i as u64).unwrap();
            (t, x)
        })
        .collect();
    let mut d = RoundDataset::new(sim.prior().clone(), 1);
    d.append_round(pairs).unwrap();
    (sim, d)
}

fn trained_gaussian_flow(n: usize) -> (TractableGaussian, RoundDataset, ConditionalDensity) {
    let (sim, d) = gaussian_dataset(n, 17);
    let mut psi = ConditionalDensity::new(DensityConfig::default(), 1, 1, &mut stream(&[18])).unwrap();
    let mut phi = ConditionalDensity::new(DensityConfig::with_kind(DensityKind::Mixture), 1, 1, &mut stream(&[19])).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    train_models(&mut psi, &mut phi, &d, 0.0, &cfg, &mut stream(&[20]), &mut stream(&[21])).unwrap();
    (sim, d, psi)
}

#[test]
fn trained_likelihood_recovers_the_mutual_information() {
    let (sim, d, psi) = trained_gaussian_flow(500);
    let m = relative_mi(&psi, &SimulatorLikelihood(&sim), &d.thetas(), 500, 500, &mut stream(&[22]));
    assert!(m.value >= 0.8, "{m:?}");
}

#[test]
fn trained_flow_samples_follow_its_density() {
    let (_, _, psi) = trained_gaussian_flow(500);
    let theta = [0.7];
    let draws = psi.sample(&theta, 100_000, &mut stream(&[23])).unwrap();
    let mut v = column(&draws, 0);
    v.sort_by(f64::total_cmp);
    // model CDF by midpoint quadrature on a fine grid
    let (lo, hi, cells) = (v[0] - 1.0, v[v.len() - 1] + 1.0, 40_000);
    let h = (hi - lo) / cells as f64;
    let grid = Matrix::from_vec(cells, 1, (0..cells).map(|i| lo + (i as f64 + 0.5) * h).collect());
    let cond = Matrix::from_rows(&vec![theta.to_vec(); cells]);
    let dens: Vec<f64> = psi.log_prob(&grid, &cond).unwrap().iter().map(|l| l.exp() * h).collect();
    let total: f64 = dens.iter().sum();
    assert!((total - 1.0).abs() < 1e-3, "mass {total}");
    let mut cdf = Vec::with_capacity(cells + 1);
    cdf.push(0.0);
    for p in &dens {
        cdf.push(cdf.last().unwrap() + p / total);
    }
    let n = v.len() as f64;
    let ks = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let pos = (x - lo) / h;
            let j = (pos.floor() as usize).min(cells - 1);
            let f = cdf[j] + (cdf[j + 1] - cdf[j]) * (pos - j as f64);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS = {ks}");
}

/// Fails every call in a region of θ, and every third seed elsewhere.
struct Flaky {
    inner: CosineToy,
    dead_below: f64,
}

impl Simulator for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }
    fn prior(&self) -> &PriorBox {
        self.inner.prior()
    }
    fn x_dim(&self) -> usize {
        2
    }
    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError> {
        if theta[0] < self.dead_below || seed % 3 == 0 {
            return Err(SimulatorError::Reported("flaky".into()));
        }
        self.inner.simulate(theta, seed)
    }
    fn modes(&self) -> Option<crate::simulators::ModeSet> {
        self.inner.modes()
    }
    fn default_observation(&self) -> Option<Vec<f64>> {
        self.inner.default_observation()
    }
}

#[test]
fn failing_simulations_are_retried_then_redrawn() {
    let sim = Flaky {
        inner: CosineToy::new(),
        dead_below: 0.3,
    };
    let s = InferenceState::initial_round(&sim, quick(1, 50, 0.0), 8).unwrap();
    assert_eq!(s.dataset.len(), 50);
    assert!(s.dataset.entries().iter().all(|e| e.theta[0] >= 0.3));
    let mut s = s;
    let report = s.train().unwrap();
    let rec = s.finish_round(&sim, report).unwrap();
    assert!(rec.redrawn > 0 && rec.simulation_failures >= 3 * rec.redrawn);

    let dead = Flaky {
        inner: CosineToy::new(),
        dead_below: 2.0,
    };
    let e = InferenceState::initial_round(&dead, quick(1, 5, 0.0), 8).unwrap_err();
    assert!(matches!(e, InferenceError::SimulationExhausted { round: 1, index: 0, .. }), "{e}");
}

#[test]
fn runs_are_deterministic_and_independent_of_workers() {
    let sim = CosineToy::new();
    let cfg = quick(2, 30, 1.0);
    let collect = |workers| run_experiment(&sim, &cfg, &[1, 2, 3], workers, &|_| {}).unwrap();
    let a = collect(1);
    let b = collect(3);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.records.len(), 6);
    let order: Vec<(u64, usize)> = a.records.iter().map(|r| (r.seed, r.round)).collect();
    assert_eq!(order, vec![(1, 1), (1, 2), (2, 1), (2, 2), (3, 1), (3, 2)]);
}

#[test]
fn single_round_experiment_is_initial_round_plus_training() {
    let sim = CosineToy::new();
    let cfg = quick(1, 30, 0.0);
    let out = run_experiment(&sim, &cfg, &[4], 1, &|_| {}).unwrap();
    let mut s = InferenceState::initial_round(&sim, cfg, 4).unwrap();
    let report = s.train().unwrap();
    let rec = s.finish_round(&sim, report).unwrap();
    assert_eq!(out.records, vec![rec.clone()]);
}

#[test]
fn failed_seeds_are_skipped_until_all_fail() {
    let sim = Flaky {
        inner: CosineToy::new(),
        dead_below: 0.05,
    };
    let mut cfg = quick(1, 20, 0.0);
    cfg.max_redraws = 0;
    let out = run_experiment(&sim, &cfg, &[1, 2, 3, 4, 5, 6], 2, &|_| {}).unwrap();
    assert!(!out.failures.is_empty() && !out.records.is_empty(), "{out:?}");
    assert!(out.failures.iter().all(|f| f.round == Some(1)));
    let dead = Flaky {
        inner: CosineToy::new(),
        dead_below: 2.0,
    };
    assert!(matches!(
        run_experiment(&dead, &cfg, &[1, 2], 1, &|_| {}),
        Err(InferenceError::AllSeedsFailed(f)) if f.len() == 2
    ));
}

#[test]
fn round_artifacts_reach_the_observer() {
    let sim = CosineToy::new();
    let cfg = quick(2, 20, 0.0);
    let seen = std::sync::Mutex::new(Vec::new());
    run_experiment(&sim, &cfg, &[1], 1, &|a: RoundArtifacts<'_>| {
        seen.lock()
            .unwrap()
            .push((a.record.round, a.posterior_samples.rows(), a.likelihood.param_count() > 0));
    })
    .unwrap();
    assert_eq!(seen.into_inner().unwrap(), vec![(1, 50, true), (2, 50, true)]);
}

#[test]
fn configuration_errors_are_caught_before_simulating() {
    let sim = CosineToy::new();
    let ok = quick(2, 10, 1.0);
    assert!(ok.validate(&sim).is_ok());
    let mut c = ok.clone();
    c.schedule.rounds = 3;
    assert!(c.validate(&sim).is_err());
    let mut c = ok.clone();
    c.budget = 0;
    assert!(c.validate(&sim).is_err());
    let mut c = ok.clone();
    c.metrics.select = Some(vec![MetricKind::Nltp]);
    assert!(c.validate(&sim).is_err());
    c.theta_true = Some(vec![0.1, 0.3]);
    assert!(c.validate(&sim).is_ok());
    let mut c = ok.clone();
    c.observation = Some(vec![0.0]);
    assert!(c.validate(&sim).is_err());
    let q = crate::simulators::Mg1Queue::new(50, 5).unwrap();
    let mut c = ok.clone();
    c.metrics.select = None;
    assert!(c.validate(&q).is_err(), "the queue has no default observation");
    c.theta_true = Some(vec![1.0, 5.0, 0.2]);
    assert!(c.validate(&q).is_ok());
    assert_eq!(c.selected_metrics(&q), vec![MetricKind::Meddist]);
    let o1 = c.resolve_observation(&q).unwrap();
    assert_eq!(o1, c.resolve_observation(&q).unwrap());
}

#[test]
fn all_metrics_on_a_tractable_simulator() {
    let sim = TractableGaussian::new(1).unwrap();
    let mut cfg = quick(1, 40, 0.0);
    cfg.theta_true = Some(vec![0.5]);
    cfg.metrics.select = Some(vec![MetricKind::RelativeMi, MetricKind::Meddist, MetricKind::Mmd, MetricKind::Nltp]);
    cfg.metrics.mi_outer = 50;
    cfg.metrics.mi_inner = 50;
    let out = run_experiment(&sim, &cfg, &[1], 1, &|_| {}).unwrap();
    let m = &out.records[0].metrics;
    assert!(m.relative_mi.is_some() && m.meddist.is_some() && m.mmd2.is_some() && m.nltp.unwrap().is_finite());
    assert!(m.modes_covered.is_none());
}
