use npr::density::{DensityConfig, DensityKind};
use npr::diffcore::Matrix;
use npr::inference::{
    run_experiment, slice_sample, InferenceConfig, McmcConfig, MetricKind, MetricSettings, RoundArtifacts, TrainConfig,
};
use npr::losses::LambdaSchedule;
use npr::metrics::mode_diversity;
use npr::rng::stream;
use npr::simulators::{GridMultimodal, Simulator};
use rand::Rng;
use std::sync::Mutex;

fn small(rounds: usize) -> InferenceConfig {
    InferenceConfig {
        rounds,
        budget: 40,
        schedule: LambdaSchedule::exponential_to(10.0, 0.01, rounds),
        likelihood: DensityConfig {
            hidden: 16,
            flow_layers: 2,
            ..DensityConfig::default()
        },
        posterior: DensityConfig {
            kind: DensityKind::Mixture,
            hidden: 16,
            components: 3,
            ..DensityConfig::default()
        },
        train: TrainConfig {
            max_epochs: 3,
            patience: 2,
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

#[test]
fn sequential_runs_stay_in_the_prior_and_ignore_the_worker_count() {
    let sim = GridMultimodal::new(2, 4, 4, 0.3).unwrap();
    let config = small(3);
    let outside = Mutex::new(0usize);
    let check = |a: RoundArtifacts<'_>| {
        let n = a.posterior_samples.row_iter().filter(|t| !sim.prior().contains(t)).count();
        *outside.lock().unwrap() += n;
    };
    let one = run_experiment(&sim, &config, &[5, 6], 1, &check).unwrap();
    let two = run_experiment(&sim, &config, &[5, 6], 2, &|_| {}).unwrap();
    assert_eq!(*outside.lock().unwrap(), 0);
    assert!(one.failures.is_empty());
    assert_eq!(one, two);
    let order: Vec<(u64, usize)> = one.records.iter().map(|r| (r.seed, r.round)).collect();
    assert_eq!(order, vec![(5, 1), (5, 2), (5, 3), (6, 1), (6, 2), (6, 3)]);
    let sizes: Vec<usize> = one.records.iter().map(|r| r.dataset_size).collect();
    assert_eq!(sizes, vec![40, 80, 120, 40, 80, 120]);
    assert!(one.records.iter().all(|r| r.metrics.mode_diversity.is_some()));
}

#[test]
fn slice_draws_on_the_exact_grid_posterior_sit_on_modes() {
    let sim = GridMultimodal::new(2, 4, 4, 0.3).unwrap();
    let x = vec![0.0; 4];
    let mut rng = stream(&[11]);
    let inits: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random(), rng.random()]).collect();
    let mut target = |m: &Matrix| Ok(m.row_iter().map(|t| sim.log_likelihood(&x, t).unwrap()).collect());
    let out = slice_sample(&mut target, sim.prior(), &Matrix::from_rows(&inits), 1000, &McmcConfig::default(), &mut rng)
        .unwrap();
    let rows: Vec<Vec<f64>> = out.samples.row_iter().map(|r| r.to_vec()).collect();
    let d = mode_diversity(&rows, &sim.modes().unwrap()).unwrap();
    assert!(d.off_mode < 20, "{} of 1000 off mode", d.off_mode);
    // chains rarely cross between modes, so coverage follows the starts
    assert!((4..=10).contains(&d.covered), "{}", d.covered);
}
