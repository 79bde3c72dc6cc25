//! Files written by `run` and `compare`.
//!
//! ```text
//! <out>/manifest.json
//! <out>/metrics.csv
//! <out>/seed_<s>/samples_round_<r>.csv
//! <out>/seed_<s>/round_<r>/likelihood.json
//! <out>/seed_<s>/round_<r>/posterior.json
//! ```

use crate::config::{ExperimentConfig, FORMAT_VERSION};
use crate::CliError;
use npr::diffcore::Matrix;
use npr::inference::{RoundRecord, SeedFailure};
use npr::simulators::PriorBox;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc::Receiver;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorSummary {
    pub name: String,
    pub theta_dim: usize,
    pub x_dim: usize,
    pub prior: PriorBox,
}

/// Self-describing record of a run: the resolved config (seeds already
/// offset) reproduces it exactly via `run --config manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub command: String,
    pub variant: Option<String>,
    pub config: ExperimentConfig,
    pub simulator: SimulatorSummary,
    pub observation: Vec<f64>,
    /// `λ_r` for rounds `1..=R`.
    pub lambdas: Vec<f64>,
    pub completed_seeds: Vec<u64>,
    pub failures: Vec<SeedFailure>,
}

pub const METRICS_COLUMNS: [&str; 26] = [
    "format_version",
    "seed",
    "round",
    "lambda",
    "dataset_size",
    "epochs",
    "best_epoch",
    "train_loss",
    "train_snl",
    "val_loss",
    "final_val_loss",
    "penalty",
    "dropped_penalty_samples",
    "lr_halvings",
    "redrawn",
    "simulation_failures",
    "prior_refill",
    "mcmc_widened",
    "modes_covered",
    "mode_diversity",
    "off_mode_fraction",
    "relative_mi",
    "relative_mi_se",
    "meddist",
    "mmd2",
    "nltp",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV row per record. Floats use the shortest round-trip form, so
/// equal results give equal bytes.
pub fn metrics_csv(records: &[RoundRecord]) -> String {
    let mut out = METRICS_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let t = &r.train;
        let m = &r.metrics;
        let fields = [
            FORMAT_VERSION.to_string(),
            r.seed.to_string(),
            r.round.to_string(),
            r.lambda.to_string(),
            r.dataset_size.to_string(),
            t.epochs.to_string(),
            t.best_epoch.to_string(),
            t.train_loss.to_string(),
            t.train_snl.to_string(),
            t.val_loss.to_string(),
            t.final_val_loss.to_string(),
            opt(t.penalty),
            t.dropped_penalty_samples.to_string(),
            t.lr_halvings.to_string(),
            r.redrawn.to_string(),
            r.simulation_failures.to_string(),
            r.prior_refill.to_string(),
            r.mcmc_widened.to_string(),
            opt(m.modes_covered),
            opt(m.mode_diversity),
            opt(m.off_mode_fraction),
            opt(m.relative_mi),
            opt(m.relative_mi_se),
            opt(m.meddist),
            opt(m.mmd2),
            opt(m.nltp),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn samples_csv(samples: &Matrix) -> String {
    let mut out = (1..=samples.cols()).map(|k| format!("theta_{k}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in samples.row_iter() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

/// Per-round output of one seed, sent to the writer.
pub struct RoundFiles {
    pub seed: u64,
    pub round: usize,
    pub samples: String,
    pub likelihood: String,
    pub posterior: String,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// The single writer: drains per-round files until every sender is gone
/// and returns the first write error, if any.
pub fn drain(out: &Path, rx: Receiver<Result<RoundFiles, CliError>>) -> Result<(), CliError> {
    let mut first_error = None;
    for f in rx {
        let f = match f {
            Ok(f) => f,
            Err(e) => {
                first_error.get_or_insert(e);
                continue;
            }
        };
        let dir = seed_dir(out, f.seed);
        let round_dir = dir.join(format!("round_{}", f.round));
        let result = write_file(&dir.join(format!("samples_round_{}.csv", f.round)), &f.samples)
            .and_then(|_| write_file(&round_dir.join("likelihood.json"), &f.likelihood))
            .and_then(|_| write_file(&round_dir.join("posterior.json"), &f.posterior));
        if let Err(e) = result {
            first_error.get_or_insert(e);
        }
    }
    first_error.map_or(Ok(()), Err)
}
