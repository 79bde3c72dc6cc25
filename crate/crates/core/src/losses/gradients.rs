//! Finite-difference checks of every training objective on small random
//! models with frozen noise and atoms.

use super::{apt_atomic_loss, npr_penalty, regularized_loss, snl_loss, AtomicNormalizer, LossError, PenaltyBatch};
use crate::density::{gaussian_noise, ConditionalDensity, DensityConfig, DensityKind};
use crate::diffcore::{flatten, grad_check, unflatten_on_tape, GradCheckError, Matrix, Tape, Var};
use crate::rng::stream;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Central differences at 1e-5 hit f64 roundoff on coordinates whose
/// gradient is ~1e-8 of the loss value; 1e-4 stays truncation-free here.
const STEP: f64 = 1e-4;
const BATCH: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGradientCheck {
    pub loss: String,
    pub parameters: usize,
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGradientReport {
    pub seed: u64,
    pub checks: Vec<LossGradientCheck>,
    pub tolerance: f64,
}

impl LossGradientReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_relative_error < self.tolerance)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GradientCheckError {
    #[error("{loss}: {source}")]
    Loss { loss: &'static str, source: LossError },
    #[error("{loss}: {source}")]
    Check { loss: &'static str, source: GradCheckError },
}

fn small(kind: DensityKind) -> DensityConfig {
    DensityConfig {
        kind,
        hidden: 8,
        hidden_layers: 2,
        flow_layers: 2,
        components: 2,
        scale_floor: 1e-3,
    }
}

fn perturbed(kind: DensityKind, seed: u64) -> Result<ConditionalDensity, LossError> {
    let mut rng = stream(&[seed]);
    let mut m = ConditionalDensity::new(small(kind), 2, 2, &mut rng)?;
    for p in m.params_mut() {
        for x in p.as_mut_slice() {
            *x += 0.2 * rng.random_range(-1.0..1.0);
        }
    }
    Ok(m)
}

fn uniform_log_prior(_: &[f64]) -> f64 {
    0.0
}

/// Runs one check; a loss error inside the closure becomes a NaN node and
/// is reported as the loss error.
fn check(
    loss: &'static str,
    model: &ConditionalDensity,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var, LossError>,
) -> Result<LossGradientCheck, GradientCheckError> {
    let shapes: Vec<_> = model.params().iter().map(|p| p.shape()).collect();
    let point = flatten(&model.params());
    let failure = RefCell::new(None);
    let report = grad_check(
        |t, flat| {
            let p = unflatten_on_tape(t, flat, &shapes);
            f(t, &p).unwrap_or_else(|e| {
                failure.borrow_mut().get_or_insert(e);
                t.constant(Matrix::from_vec(1, 1, vec![f64::NAN]))
            })
        },
        &point,
        STEP,
    );
    if let Some(source) = failure.into_inner() {
        return Err(GradientCheckError::Loss { loss, source });
    }
    let report = report.map_err(|source| GradientCheckError::Check { loss, source })?;
    Ok(LossGradientCheck {
        loss: loss.to_string(),
        parameters: point.len(),
        max_relative_error: report.max_relative_error,
        worst_coordinate: report.worst_coordinate,
    })
}

/// Checks the likelihood loss, the atomic posterior loss, the penalty and
/// the regularized loss against central differences. The likelihood model
/// is a small flow, the posterior model a conditional Gaussian.
pub fn loss_gradient_report(seed: u64) -> Result<LossGradientReport, GradientCheckError> {
    let setup = |e| GradientCheckError::Loss { loss: "setup", source: e };
    let psi = perturbed(DensityKind::Flow, seed.wrapping_add(1)).map_err(setup)?;
    let phi = perturbed(DensityKind::Gaussian, seed.wrapping_add(2)).map_err(setup)?;
    let mut rng = stream(&[seed]);
    let k = 2;
    let theta = Matrix::from_vec(BATCH, 2, (0..2 * BATCH).map(|_| rng.random::<f64>()).collect());
    let x = gaussian_noise(BATCH, 2, &mut rng);
    let reps: Vec<usize> = (0..BATCH * k).map(|i| i / k).collect();
    let atoms = AtomicNormalizer::new(4)
        .draw(&theta.select_rows(&reps), Some(&reps), &theta, &uniform_log_prior, &mut rng)
        .map_err(setup)?;
    let penalty = PenaltyBatch {
        theta: theta.clone(),
        noise: gaussian_noise(BATCH * k, 2, &mut rng),
        draws_per_theta: k,
        atoms,
    };
    let own: Vec<usize> = (0..BATCH).collect();
    let posterior_atoms = AtomicNormalizer::new(3)
        .draw(&theta, Some(&own), &theta, &uniform_log_prior, &mut rng)
        .map_err(setup)?;

    let checks = vec![
        check("snl_loss", &psi, |t, p| snl_loss(t, &psi, p, &theta, &x))?,
        check("apt_atomic_loss", &phi, |t, p| apt_atomic_loss(t, &phi, p, &x, &posterior_atoms))?,
        check("npr_penalty", &psi, |t, p| Ok(npr_penalty(t, &psi, p, &phi, &penalty)?.value))?,
        check("regularized_loss", &psi, |t, p| {
            Ok(regularized_loss(t, &psi, p, &phi, &theta, &x, Some(&penalty), 0.7)?.value)
        })?,
    ];
    Ok(LossGradientReport {
        seed,
        checks,
        tolerance: GRADIENT_TOLERANCE,
    })
}
