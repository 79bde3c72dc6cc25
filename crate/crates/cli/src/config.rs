//! Experiment configuration files.
//!
//! A config is TOML with a `[simulator]` table selected by `name`, the
//! experiment shape (`rounds`, `budget`, `seeds`, `schedule`), model and
//! training sections, and optional `[[variants]]` for `compare`. A
//! `manifest.json` written by `run` is accepted in place of a config.

use crate::artifacts::Manifest;
use crate::CliError;
use npr::density::{ConditionalDensity, DensityConfig};
use npr::inference::{InferenceConfig, McmcConfig, MetricSettings, TrainConfig};
use npr::losses::{LambdaSchedule, ScheduleKind};
use npr::rng::stream;
use npr::simulators::{Simulator, SimulatorConfig};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;

/// TOML integers are signed.
pub const MAX_SEED: u64 = i64::MAX as u64;

pub const SIMULATOR_NAMES: [&str; 6] = [
    "cosine_toy",
    "grid_multimodal",
    "mg1_queue",
    "ricker",
    "tractable_gaussian",
    "external",
];

/// An invalid configuration, tied to the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// A λ schedule over the experiment's rounds. Exponential decay takes
/// either `gamma` or the final value `lambda_final`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub lambda0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_final: Option<f64>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Exponential,
            lambda0: 10.0,
            gamma: None,
            lambda_final: Some(0.01),
        }
    }
}

impl ScheduleSpec {
    pub fn constant(lambda0: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            lambda0,
            gamma: None,
            lambda_final: None,
        }
    }

    pub fn build(&self, rounds: usize) -> Result<LambdaSchedule, String> {
        let s = match (self.kind, self.gamma, self.lambda_final) {
            (ScheduleKind::Exponential, Some(_), Some(_)) => {
                return Err("give either gamma or lambda_final, not both".into());
            }
            (ScheduleKind::Exponential, None, Some(last)) => {
                if !(last > 0.0 && last <= self.lambda0) {
                    return Err(format!("lambda_final must lie in (0, lambda0], got {last}"));
                }
                LambdaSchedule::exponential_to(self.lambda0, last, rounds)
            }
            (ScheduleKind::Exponential, gamma, None) => LambdaSchedule::exponential(self.lambda0, gamma.unwrap_or(1.0), rounds),
            (ScheduleKind::Constant, None, None) => LambdaSchedule::constant(self.lambda0, rounds),
            (ScheduleKind::Cosine, None, None) => LambdaSchedule::cosine(self.lambda0, rounds),
            (kind, _, _) => return Err(format!("{kind:?} schedules take neither gamma nor lambda_final")),
        };
        s.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }

    /// Parses `KIND:LAMBDA0[:X]`, where `X` is `lambda_final` for
    /// exponential decay.
    pub fn parse(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(':').collect();
        let kind = match parts[0] {
            "constant" => ScheduleKind::Constant,
            "exponential" => ScheduleKind::Exponential,
            "cosine" => ScheduleKind::Cosine,
            other => return Err(format!("unknown schedule kind `{other}`")),
        };
        let number = |s: &str| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
        let lambda0 = number(parts.get(1).ok_or("missing lambda0")?)?;
        let lambda_final = match (kind, parts.get(2)) {
            (ScheduleKind::Exponential, Some(s)) => Some(number(s)?),
            (ScheduleKind::Exponential, None) => Some(0.01),
            (_, Some(_)) => return Err("only exponential schedules take a third field".into()),
            (_, None) => None,
        };
        if parts.len() > 3 {
            return Err("too many fields".into());
        }
        Ok(Self {
            kind,
            lambda0,
            gamma: None,
            lambda_final,
        })
    }
}

/// One arm of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub schedule: ScheduleSpec,
}

impl Variant {
    /// Parses `NAME=KIND:LAMBDA0[:LAMBDA_FINAL]`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let (name, schedule) = text.split_once('=').ok_or("expected NAME=KIND:LAMBDA0[:LAMBDA_FINAL]")?;
        Ok(Self {
            name: name.to_string(),
            schedule: ScheduleSpec::parse(schedule)?,
        })
    }
}

fn default_version() -> u32 {
    FORMAT_VERSION
}
fn default_rounds() -> usize {
    InferenceConfig::default().rounds
}
fn default_budget() -> usize {
    InferenceConfig::default().budget
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_posterior() -> DensityConfig {
    InferenceConfig::default().posterior
}
fn default_attempts() -> usize {
    InferenceConfig::default().simulation_attempts
}
fn default_redraws() -> usize {
    InferenceConfig::default().max_redraws
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Simulations per round.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<Vec<f64>>,
    #[serde(default = "default_attempts")]
    pub simulation_attempts: usize,
    #[serde(default = "default_redraws")]
    pub max_redraws: usize,
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub likelihood: DensityConfig,
    #[serde(default = "default_posterior")]
    pub posterior: DensityConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub metrics: MetricSettings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<Variant>,
}

impl ExperimentConfig {
    /// Defaults for everything but the simulator.
    pub fn new(simulator: SimulatorConfig) -> Self {
        let d = InferenceConfig::default();
        Self {
            format_version: FORMAT_VERSION,
            output_dir: None,
            seeds: default_seeds(),
            rounds: d.rounds,
            budget: d.budget,
            observation: None,
            theta_true: None,
            simulation_attempts: d.simulation_attempts,
            max_redraws: d.max_redraws,
            simulator,
            schedule: ScheduleSpec::default(),
            likelihood: d.likelihood,
            posterior: d.posterior,
            train: d.train,
            mcmc: d.mcmc,
            metrics: d.metrics,
            variants: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::new("config", e.message()))?;
        match table.get("simulator") {
            None => return Err(ConfigError::new("simulator", "missing [simulator] table")),
            Some(toml::Value::Table(t)) => match t.get("name") {
                Some(toml::Value::String(name)) if !SIMULATOR_NAMES.contains(&name.as_str()) => {
                    return Err(ConfigError::new(
                        "simulator.name",
                        format!("unknown simulator `{name}`, expected one of {}", SIMULATOR_NAMES.join(", ")),
                    ));
                }
                Some(toml::Value::String(_)) => {}
                _ => return Err(ConfigError::new("simulator.name", "missing simulator name")),
            },
            Some(_) => return Err(ConfigError::new("simulator", "expected a table")),
        }
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let field = field_of(text, &e).unwrap_or_else(|| "config".into());
            ConfigError::new(field, message)
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// Reads a TOML config, or the config echoed in a `manifest.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(ConfigError::new("--config", format!("{}: {e}", path.display()))))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Config(ConfigError::new("manifest", e)))?;
            return Ok(m.config);
        }
        Self::from_toml(&text).map_err(CliError::Config)
    }

    pub fn lambda_schedule(&self) -> Result<LambdaSchedule, ConfigError> {
        self.schedule.build(self.rounds).map_err(|e| ConfigError::new("schedule", e))
    }

    pub fn inference(&self, schedule: LambdaSchedule) -> InferenceConfig {
        InferenceConfig {
            rounds: self.rounds,
            budget: self.budget,
            schedule,
            likelihood: self.likelihood.clone(),
            posterior: self.posterior.clone(),
            train: self.train.clone(),
            mcmc: self.mcmc.clone(),
            metrics: self.metrics.clone(),
            observation: self.observation.clone(),
            theta_true: self.theta_true.clone(),
            simulation_attempts: self.simulation_attempts,
            max_redraws: self.max_redraws,
        }
    }

    /// Checks every field before any simulation runs; the error names the
    /// first offending field.
    pub fn validate(&self) -> Result<Box<dyn Simulator>, ConfigError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ConfigError::new(
                "format_version",
                format!("unsupported version {}, expected {FORMAT_VERSION}", self.format_version),
            ));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::new("seeds", "need at least one seed"));
        }
        if let Some(s) = self.seeds.iter().find(|s| **s > MAX_SEED) {
            return Err(ConfigError::new("seeds", format!("{s} exceeds the largest config integer {MAX_SEED}")));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::new("seeds", "seeds must be distinct"));
        }
        if self.rounds == 0 {
            return Err(ConfigError::new("rounds", "must be at least 1"));
        }
        if self.budget == 0 {
            return Err(ConfigError::new("budget", "must be at least 1"));
        }
        if self.simulation_attempts == 0 {
            return Err(ConfigError::new("simulation_attempts", "must be at least 1"));
        }
        let simulator = self.simulator.build().map_err(|e| ConfigError::new("simulator", e))?;
        let schedule = self.lambda_schedule()?;
        let (td, xd) = (simulator.theta_dim(), simulator.x_dim());
        let mut rng = stream(&[0]);
        ConditionalDensity::new(self.likelihood.clone(), xd, td, &mut rng).map_err(|e| ConfigError::new("likelihood", e))?;
        ConditionalDensity::new(self.posterior.clone(), td, xd, &mut rng).map_err(|e| ConfigError::new("posterior", e))?;
        let needs_penalty = !schedule.is_zero() || self.variants.iter().any(|v| v.schedule.lambda0 > 0.0);
        if needs_penalty && !self.likelihood.kind.reparameterizable() {
            return Err(ConfigError::new(
                "likelihood.kind",
                format!("a {:?} likelihood cannot carry the penalty; use flow or gaussian", self.likelihood.kind),
            ));
        }
        self.train.validate().map_err(|e| ConfigError::new("train", e))?;
        self.mcmc.validate().map_err(|e| ConfigError::new("mcmc", e))?;
        if let Some(t) = &self.theta_true {
            if t.len() != td || !simulator.prior().contains(t) {
                return Err(ConfigError::new("theta_true", format!("{t:?} is not inside the prior box")));
            }
        }
        if let Some(o) = &self.observation {
            if o.len() != xd || o.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError::new("observation", format!("need {xd} finite values, got {o:?}")));
            }
        } else if self.theta_true.is_none() && simulator.default_observation().is_none() {
            return Err(ConfigError::new(
                "observation",
                format!("simulator {} has no default observation; set observation or theta_true", simulator.name()),
            ));
        }
        let inference = self.inference(schedule);
        for m in inference.selected_metrics(simulator.as_ref()) {
            if let Some(why) = m.unavailable(simulator.as_ref(), self.theta_true.as_deref()) {
                return Err(ConfigError::new("metrics.select", format!("{m:?}: {why}")));
            }
        }
        for (i, v) in self.variants.iter().enumerate() {
            let field = format!("variants[{i}]");
            if v.name.is_empty() || !v.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                return Err(ConfigError::new(field, format!("name `{}` must be nonempty and use only [A-Za-z0-9._-]", v.name)));
            }
            if self.variants[..i].iter().any(|w| w.name == v.name) {
                return Err(ConfigError::new(field, format!("duplicate name `{}`", v.name)));
            }
            v.schedule.build(self.rounds).map_err(|e| ConfigError::new(format!("{field}.schedule"), e))?;
        }
        inference
            .validate(simulator.as_ref())
            .map_err(|e| ConfigError::new("config", e))?;
        Ok(simulator)
    }
}

/// Best-effort dotted key path of a deserialization error, from the
/// span it points at.
fn field_of(text: &str, e: &toml::de::Error) -> Option<String> {
    let span = e.span()?;
    let before = &text[..span.start.min(text.len())];
    let table = before
        .lines()
        .rev()
        .find_map(|l| {
            let l = l.trim();
            l.strip_prefix("[[")
                .and_then(|s| s.strip_suffix("]]"))
                .or_else(|| l.strip_prefix('[').and_then(|s| s.strip_suffix(']')))
                .map(str::to_string)
        });
    let start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("");
    let key = line
        .contains('=')
        .then(|| line.split('=').next().map(str::trim))
        .flatten()
        .filter(|k| !k.is_empty() && !k.starts_with('['));
    match (table, key) {
        (Some(t), Some(k)) => Some(format!("{t}.{k}")),
        (Some(t), None) => Some(t),
        (None, Some(k)) => Some(k.to_string()),
        (None, None) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_schedule_ends_at_its_final_value() {
        let s = ScheduleSpec::default().build(15).unwrap();
        assert_eq!(s.lambda_at(1).unwrap(), 10.0);
        assert!((s.lambda_at(15).unwrap() - 0.01).abs() < 1e-12);
        let g = ScheduleSpec {
            gamma: Some(0.5),
            lambda_final: None,
            ..ScheduleSpec::default()
        };
        assert_eq!(g.build(3).unwrap().lambda_at(3).unwrap(), 2.5);
        let both = ScheduleSpec {
            gamma: Some(0.5),
            ..ScheduleSpec::default()
        };
        assert!(both.build(3).is_err());
        let constant_with_gamma = ScheduleSpec {
            gamma: Some(0.5),
            ..ScheduleSpec::constant(1.0)
        };
        assert!(constant_with_gamma.build(3).is_err());
    }

    #[test]
    fn parse_errors_point_at_the_key() {
        let text = "rounds = 3\n\n[simulator]\nname = \"cosine_toy\"\n\n[train]\nbatch_size = \"ten\"\n";
        let e = ExperimentConfig::from_toml(text).unwrap_err();
        assert_eq!(e.field, "train.batch_size", "{e}");
        let e = ExperimentConfig::from_toml("rounds = -1\n[simulator]\nname = \"cosine_toy\"\n").unwrap_err();
        assert_eq!(e.field, "rounds", "{e}");
        let e = ExperimentConfig::from_toml("rounds = 3\n").unwrap_err();
        assert_eq!(e.field, "simulator");
        let e = ExperimentConfig::from_toml("[simulator]\ndims = 2\n").unwrap_err();
        assert_eq!(e.field, "simulator.name");
    }
}
