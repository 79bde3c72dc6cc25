use super::LossError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Exponential,
    Cosine,
}

/// Per-round regularization coefficient.
///
/// * constant: `λ₀`
/// * exponential: `λ₀·γ^(r−1)`
/// * cosine: `λ₀·(1 + cos(π(r−1)/(R−1)))/2`, and `λ₀` when `R = 1`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSchedule {
    pub kind: ScheduleKind,
    pub lambda0: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    pub rounds: usize,
}

fn one() -> f64 {
    1.0
}

impl LambdaSchedule {
    pub fn constant(lambda0: f64, rounds: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            lambda0,
            gamma: 1.0,
            rounds,
        }
    }

    pub fn exponential(lambda0: f64, gamma: f64, rounds: usize) -> Self {
        Self {
            kind: ScheduleKind::Exponential,
            lambda0,
            gamma,
            rounds,
        }
    }

    pub fn cosine(lambda0: f64, rounds: usize) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            lambda0,
            gamma: 1.0,
            rounds,
        }
    }

    /// Exponential decay from `lambda0` that reaches `last` at round `R`.
    pub fn exponential_to(lambda0: f64, last: f64, rounds: usize) -> Self {
        let gamma = if rounds > 1 && lambda0 > 0.0 {
            (last / lambda0).powf(1.0 / (rounds - 1) as f64)
        } else {
            1.0
        };
        Self::exponential(lambda0, gamma, rounds)
    }

    /// Exponential decay from 10 to 0.01 over `rounds`.
    pub fn default_for(rounds: usize) -> Self {
        Self::exponential_to(10.0, 0.01, rounds)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return Err(LossError::Schedule(format!("lambda0 must be finite and nonnegative, got {}", self.lambda0)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(LossError::Schedule(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.rounds == 0 {
            return Err(LossError::Schedule("rounds must be at least 1".into()));
        }
        Ok(())
    }

    /// True when every round has `λ = 0`.
    pub fn is_zero(&self) -> bool {
        self.lambda0 == 0.0
    }

    pub fn lambda_at(&self, round: usize) -> Result<f64, LossError> {
        self.validate()?;
        if round == 0 || round > self.rounds {
            return Err(LossError::RoundOutOfRange {
                round,
                rounds: self.rounds,
            });
        }
        let r = (round - 1) as f64;
        Ok(match self.kind {
            ScheduleKind::Constant => self.lambda0,
            ScheduleKind::Exponential => self.lambda0 * self.gamma.powf(r),
            ScheduleKind::Cosine if self.rounds == 1 => self.lambda0,
            ScheduleKind::Cosine => {
                let t = r / (self.rounds - 1) as f64;
                // clamp the endpoint so cos(π) rounding never goes negative
                (self.lambda0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())).max(0.0)
            }
        })
    }
}
