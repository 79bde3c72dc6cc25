use crate::artifacts::{drain, metrics_csv, samples_csv, write_file, write_json, Manifest, RoundFiles, SimulatorSummary};
use crate::config::{ConfigError, ExperimentConfig, Variant, FORMAT_VERSION};
use crate::CliError;
use npr::inference::{run_experiment, InferenceError, RoundArtifacts, RoundRecord, SeedFailure};
use npr::losses::LambdaSchedule;
use npr::simulators::Simulator;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Overrides `output_dir` of the config.
    pub out: Option<PathBuf>,
    pub workers: usize,
    /// Added to every configured seed.
    pub seed_offset: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            out: None,
            workers: 1,
            seed_offset: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub manifest: Manifest,
    pub records: Vec<RoundRecord>,
}

fn output_dir(config: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf, ConfigError> {
    opts.out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| ConfigError::new("output_dir", "set output_dir in the config or pass --out"))
}

fn offset_seeds(config: &ExperimentConfig, offset: u64) -> Result<Vec<u64>, ConfigError> {
    config
        .seeds
        .iter()
        .map(|s| s.checked_add(offset))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| ConfigError::new("--seed-offset", format!("{offset} overflows a seed")))
}

/// Runs one schedule into `out`. Round files go through a single writer
/// thread as seeds finish rounds; metrics and manifest are written last,
/// in seed order. Failed seeds are listed in the manifest.
fn run_into(
    simulator: &dyn Simulator,
    config: &ExperimentConfig,
    schedule: LambdaSchedule,
    variant: Option<&str>,
    out: &Path,
    workers: usize,
) -> Result<RunSummary, CliError> {
    let inference = config.inference(schedule);
    let observation = inference
        .resolve_observation(simulator)
        .map_err(|e| CliError::Runtime(format!("observation: {e}")))?;
    let lambdas = (1..=config.rounds)
        .map(|r| schedule.lambda_at(r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ConfigError::new("schedule", e))?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let (tx, rx) = mpsc::channel::<Result<RoundFiles, CliError>>();
    let (outcome, written) = std::thread::scope(|scope| {
        let writer = scope.spawn(|| drain(out, rx));
        let outcome = {
            let tx = tx;
            let on_round = |a: RoundArtifacts<'_>| {
                let files = (|| {
                    Ok(RoundFiles {
                        seed: a.record.seed,
                        round: a.record.round,
                        samples: samples_csv(a.posterior_samples),
                        likelihood: a.likelihood.to_checkpoint().to_json().map_err(|e| CliError::Runtime(e.to_string()))?,
                        posterior: a.posterior.to_checkpoint().to_json().map_err(|e| CliError::Runtime(e.to_string()))?,
                    })
                })();
                let _ = tx.send(files);
            };
            run_experiment(simulator, &inference, &config.seeds, workers, &on_round)
        };
        let written = writer.join().unwrap_or_else(|_| Err(CliError::Runtime("artifact writer panicked".into())));
        (outcome, written)
    });

    let (records, failures) = match outcome {
        Ok(o) => (o.records, o.failures),
        Err(InferenceError::AllSeedsFailed(f)) => (Vec::new(), f),
        Err(InferenceError::Config(m)) => return Err(ConfigError::new("config", m).into()),
        Err(e) => return Err(CliError::Runtime(e.to_string())),
    };
    let completed_seeds = config
        .seeds
        .iter()
        .copied()
        .filter(|s| !failures.iter().any(|f| f.seed == *s))
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: if variant.is_some() { "compare" } else { "run" }.to_string(),
        variant: variant.map(str::to_string),
        config: config.clone(),
        simulator: SimulatorSummary {
            name: simulator.name().to_string(),
            theta_dim: simulator.theta_dim(),
            x_dim: simulator.x_dim(),
            prior: simulator.prior().clone(),
        },
        observation,
        lambdas,
        completed_seeds,
        failures: failures.clone(),
    };
    write_file(&out.join("metrics.csv"), &metrics_csv(&records))?;
    write_json(&out.join("manifest.json"), &manifest)?;
    written?;
    Ok(RunSummary {
        out: out.to_path_buf(),
        manifest,
        records,
    })
}

/// Resolves the config (seed offset, output directory) and validates it.
fn prepare(config: &ExperimentConfig, opts: &RunOptions) -> Result<(ExperimentConfig, Box<dyn Simulator>, PathBuf), CliError> {
    if opts.workers == 0 {
        return Err(ConfigError::new("--workers", "must be at least 1").into());
    }
    let out = output_dir(config, opts)?;
    let mut resolved = config.clone();
    resolved.seeds = offset_seeds(config, opts.seed_offset)?;
    resolved.output_dir = Some(out.clone());
    let simulator = resolved.validate()?;
    Ok((resolved, simulator, out))
}

/// `run`: every seed of the configured schedule. Seeds that fail are
/// reported after the artifacts of the others are written.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let (resolved, simulator, out) = prepare(config, opts)?;
    let schedule = resolved.lambda_schedule()?;
    let summary = run_into(simulator.as_ref(), &resolved, schedule, None, &out, opts.workers)?;
    if !summary.manifest.failures.is_empty() {
        return Err(CliError::SeedFailures(summary.manifest.failures));
    }
    Ok(summary)
}

pub const COMPARISON_COLUMNS: [&str; 12] = [
    "format_version",
    "variant",
    "seed",
    "round",
    "lambda",
    "modes_covered",
    "mode_diversity",
    "off_mode_fraction",
    "relative_mi",
    "meddist",
    "mmd2",
    "nltp",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub directory: PathBuf,
    pub lambdas: Vec<f64>,
    pub completed_seeds: Vec<u64>,
    pub failures: Vec<SeedFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub format_version: u32,
    pub command: String,
    pub config: ExperimentConfig,
    pub variants: Vec<VariantSummary>,
    /// `(variant, record)` rows in variant, seed, round order.
    #[serde(skip)]
    pub records: Vec<(String, RoundRecord)>,
}

fn comparison_csv(rows: &[(String, RoundRecord)]) -> String {
    fn opt<T: ToString>(v: Option<T>) -> String {
        v.map(|v| v.to_string()).unwrap_or_default()
    }
    let mut out = COMPARISON_COLUMNS.join(",");
    out.push('\n');
    for (name, r) in rows {
        let m = &r.metrics;
        let fields = [
            FORMAT_VERSION.to_string(),
            name.clone(),
            r.seed.to_string(),
            r.round.to_string(),
            r.lambda.to_string(),
            opt(m.modes_covered),
            opt(m.mode_diversity),
            opt(m.off_mode_fraction),
            opt(m.relative_mi),
            opt(m.meddist),
            opt(m.mmd2),
            opt(m.nltp),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// `compare`: the same experiment under each λ schedule with shared
/// seeds. Each variant gets a full run directory `<out>/<name>`; the
/// per-round metrics of all variants go to `<out>/comparison.csv`.
/// `variants` overrides the config's `[[variants]]` when nonempty.
pub fn compare(config: &ExperimentConfig, variants: &[Variant], opts: &RunOptions) -> Result<CompareSummary, CliError> {
    let mut config = config.clone();
    if !variants.is_empty() {
        config.variants = variants.to_vec();
    }
    if config.variants.len() < 2 {
        return Err(ConfigError::new("variants", format!("need at least 2 variants, got {}", config.variants.len())).into());
    }
    let (resolved, simulator, out) = prepare(&config, opts)?;
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for v in &resolved.variants {
        let schedule = v
            .schedule
            .build(resolved.rounds)
            .map_err(|e| ConfigError::new(format!("variants.{}", v.name), e))?;
        let mut single = resolved.clone();
        single.schedule = v.schedule.clone();
        single.variants.clear();
        let dir = out.join(&v.name);
        single.output_dir = Some(dir.clone());
        let RunSummary { records, manifest, .. } =
            run_into(simulator.as_ref(), &single, schedule, Some(&v.name), &dir, opts.workers)?;
        failures.extend(manifest.failures.iter().cloned().map(|mut f| {
            f.error = format!("variant {}: {}", v.name, f.error);
            f
        }));
        rows.extend(records.into_iter().map(|r| (v.name.clone(), r)));
        summaries.push(VariantSummary {
            name: v.name.clone(),
            directory: dir,
            lambdas: manifest.lambdas,
            completed_seeds: manifest.completed_seeds,
            failures: manifest.failures,
        });
    }
    let summary = CompareSummary {
        format_version: FORMAT_VERSION,
        command: "compare".into(),
        config: resolved,
        variants: summaries,
        records: rows,
    };
    write_file(&out.join("comparison.csv"), &comparison_csv(&summary.records))?;
    write_json(&out.join("manifest.json"), &summary)?;
    if !failures.is_empty() {
        return Err(CliError::SeedFailures(failures));
    }
    Ok(summary)
}
