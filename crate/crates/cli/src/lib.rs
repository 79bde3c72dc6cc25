//! Front end of the `npr` binary: experiment configs, artifact output and
//! the `run`, `compare`, `verify` and `simulate` commands.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

pub mod artifacts;
pub mod config;
mod experiment;
mod simulate;
mod verify;

pub use config::{ConfigError, ExperimentConfig, ScheduleSpec, Variant, FORMAT_VERSION};
pub use experiment::{compare, run, CompareSummary, RunOptions, RunSummary, COMPARISON_COLUMNS};
pub use simulate::{simulate, SimulationRecord};
pub use verify::{verify, Suite, ToyCheck, TrajectorySummary, VerifyOptions, VerifyReport};

use npr::inference::SeedFailure;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(ConfigError),
    #[error("{}", describe(.0))]
    SeedFailures(Vec<SeedFailure>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
}

fn describe(failures: &[SeedFailure]) -> String {
    let lines: Vec<String> = failures
        .iter()
        .map(|f| match f.round {
            Some(r) => format!("seed {} failed in round {r}: {}", f.seed, f.error),
            None => format!("seed {} failed: {}", f.seed, f.error),
        })
        .collect();
    lines.join("\n")
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}
