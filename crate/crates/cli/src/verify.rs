use crate::config::FORMAT_VERSION;
use npr::losses::{loss_gradient_report, LossGradientReport};
use npr::oracle::toy::TOY_DECAY;
use npr::oracle::{theorem1_report, theorem2_report, toy_report, Theorem1Report, Theorem2Report, Trajectory};
use npr::rng::stream;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Toy,
    Theorem1,
    Theorem2,
    Gradcheck,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Per-step `λ` decay of the annealed toy run.
    pub toy_decay: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            toy_decay: TOY_DECAY,
        }
    }
}

/// A toy trajectory without its iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub steps: usize,
    pub steps_to_ball: Option<usize>,
    pub final_point: [f64; 2],
    pub distance_to_optimum: f64,
    pub final_gradient_norm: f64,
    pub step_halvings: usize,
}

impl From<&Trajectory> for TrajectorySummary {
    fn from(t: &Trajectory) -> Self {
        Self {
            steps: t.points.len().saturating_sub(1),
            steps_to_ball: t.steps_to_ball,
            final_point: t.final_point,
            distance_to_optimum: t.distance_to_optimum(),
            final_gradient_norm: t.final_gradient_norm,
            step_halvings: t.step_halvings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCheck {
    pub passed: bool,
    pub decay: f64,
    pub snl: TrajectorySummary,
    pub snl_f1: TrajectorySummary,
    pub fixed_lambda: TrajectorySummary,
    pub annealed: TrajectorySummary,
    pub snl_converges: bool,
    pub f1_is_faster: bool,
    pub fixed_lambda_is_biased: bool,
    pub annealed_converges: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timed<T> {
    pub passed: bool,
    pub seconds: f64,
    pub report: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub format_version: u32,
    pub suite: Suite,
    pub seed: u64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toy: Option<Timed<ToyCheck>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theorem1: Option<Timed<Theorem1Report>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theorem2: Option<Timed<Theorem2Report>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradcheck: Option<Timed<LossGradientReport>>,
    /// Suites that could not run at all.
    pub errors: Vec<String>,
}

pub const THEOREM1_JOINTS: usize = 100;
pub const THEOREM2_JOINTS: usize = 25;
pub const MAX_STATES: usize = 8;
pub const THEOREM2_LAMBDAS: [f64; 3] = [0.1, 0.5, 1.0];

fn timed<T, E: std::fmt::Display>(
    name: &str,
    errors: &mut Vec<String>,
    f: impl FnOnce() -> Result<T, E>,
    passed: impl Fn(&T) -> bool,
) -> Option<Timed<T>> {
    let start = Instant::now();
    match f() {
        Ok(report) => Some(Timed {
            passed: passed(&report),
            seconds: start.elapsed().as_secs_f64(),
            report,
        }),
        Err(e) => {
            errors.push(format!("{name}: {e}"));
            None
        }
    }
}

/// Runs the selected oracle suites. Passes iff every selected suite ran
/// and every residual is within its tolerance.
pub fn verify(suite: Suite, opts: &VerifyOptions) -> VerifyReport {
    let wants = |s: Suite| suite == s || suite == Suite::All;
    let mut errors = Vec::new();
    let toy = wants(Suite::Toy)
        .then(|| {
            timed(
                "toy",
                &mut errors,
                || {
                    toy_report(opts.toy_decay).map(|r| ToyCheck {
                        passed: r.passed(),
                        decay: opts.toy_decay,
                        snl: (&r.snl).into(),
                        snl_f1: (&r.snl_f1).into(),
                        fixed_lambda: (&r.fixed).into(),
                        annealed: (&r.annealed).into(),
                        snl_converges: r.snl_converges,
                        f1_is_faster: r.f1_is_faster,
                        fixed_lambda_is_biased: r.fixed_lambda_is_biased,
                        annealed_converges: r.annealed_converges,
                    })
                },
                |r| r.passed,
            )
        })
        .flatten();
    let theorem1 = wants(Suite::Theorem1)
        .then(|| {
            timed(
                "theorem1",
                &mut errors,
                || theorem1_report(THEOREM1_JOINTS, MAX_STATES, &mut stream(&[opts.seed, 1])),
                Theorem1Report::passed,
            )
        })
        .flatten();
    let theorem2 = wants(Suite::Theorem2)
        .then(|| {
            timed(
                "theorem2",
                &mut errors,
                || theorem2_report(THEOREM2_JOINTS, MAX_STATES, &THEOREM2_LAMBDAS, &mut stream(&[opts.seed, 2])),
                Theorem2Report::passed,
            )
        })
        .flatten();
    let gradcheck = wants(Suite::Gradcheck)
        .then(|| timed("gradcheck", &mut errors, || loss_gradient_report(opts.seed), LossGradientReport::passed))
        .flatten();
    let passed = errors.is_empty()
        && toy.as_ref().map_or(true, |t| t.passed)
        && theorem1.as_ref().map_or(true, |t| t.passed)
        && theorem2.as_ref().map_or(true, |t| t.passed)
        && gradcheck.as_ref().map_or(true, |t| t.passed);
    VerifyReport {
        format_version: FORMAT_VERSION,
        suite,
        seed: opts.seed,
        passed,
        toy,
        theorem1,
        theorem2,
        gradcheck,
        errors,
    }
}
