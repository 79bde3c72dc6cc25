use super::{AtomSet, LossError};
use crate::density::TapeDensity;
use crate::diffcore::{Matrix, Tape, Var};

fn first_non_finite(values: &[f64]) -> Option<(usize, f64)> {
    values.iter().copied().enumerate().find(|(_, v)| !v.is_finite())
}

/// Mean negative log-likelihood `−(1/n) Σ ln q_ψ(xᵢ | θᵢ)`.
pub fn snl_loss<D: TapeDensity + ?Sized>(
    tape: &mut Tape,
    psi: &D,
    psi_params: &[Var],
    theta: &Matrix,
    x: &Matrix,
) -> Result<Var, LossError> {
    if theta.rows() == 0 {
        return Err(LossError::EmptyBatch);
    }
    if theta.rows() != x.rows() {
        return Err(LossError::Batch(format!("{} θ rows but {} x rows", theta.rows(), x.rows())));
    }
    let th = tape.constant(theta.clone());
    let xv = tape.constant(x.clone());
    let lp = psi.log_prob_on(tape, psi_params, xv, th)?;
    if let Some((index, value)) = first_non_finite(tape.value(lp).as_slice()) {
        return Err(LossError::NonFinite { index, value });
    }
    let m = tape.mean(lp);
    Ok(tape.neg(m))
}

/// Per-element `ln q(θ_own | x) − ln Ẑ(x)` as an `n × 1` column.
fn normalized_log_posterior<D: TapeDensity + ?Sized>(
    tape: &mut Tape,
    phi: &D,
    phi_params: &[Var],
    x: Var,
    atoms: &AtomSet,
) -> Result<Var, LossError> {
    let n = atoms.elements();
    let m = atoms.per_element();
    let a = tape.constant(atoms.atoms().clone());
    let lq = phi.log_prob_atoms_on(tape, phi_params, a, x, m)?;
    let lq = tape.reshape(lq, n, m);
    let own = tape.slice_cols(lq, 0, 1);
    let shifted = tape.add_const(lq, atoms.log_offsets());
    let log_z = tape.logsumexp_rows(shifted);
    Ok(tape.sub(own, log_z))
}

/// Atomic posterior loss
/// `−(1/n) Σ [ln q_φ(θᵢ | xᵢ) − ln p(θᵢ) − ln Ẑ(xᵢ)]`.
pub fn apt_atomic_loss<D: TapeDensity + ?Sized>(
    tape: &mut Tape,
    phi: &D,
    phi_params: &[Var],
    x: &Matrix,
    atoms: &AtomSet,
) -> Result<Var, LossError> {
    let n = atoms.elements();
    if n == 0 {
        return Err(LossError::EmptyBatch);
    }
    if x.rows() != n {
        return Err(LossError::Batch(format!("{n} atom groups but {} x rows", x.rows())));
    }
    let xv = tape.constant(x.clone());
    let ratio = normalized_log_posterior(tape, phi, phi_params, xv, atoms)?;
    let own_lp = Matrix::column_vector(atoms.own_log_prior());
    let ratio = tape.add_const(ratio, &own_lp.map(|v| -v));
    if let Some((index, value)) = first_non_finite(tape.value(ratio).as_slice()) {
        return Err(LossError::BadNormalizer { index, value });
    }
    let m = tape.mean(ratio);
    Ok(tape.neg(m))
}

/// Inputs of the posterior-regularization penalty for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyBatch {
    /// `n × dθ` rows drawn from `p̃_r`.
    pub theta: Matrix,
    /// `n·K × dx` standard normal noise; rows `iK..(i+1)K` belong to θᵢ.
    pub noise: Matrix,
    pub draws_per_theta: usize,
    /// One atom group per `(θᵢ, draw)`, own θ in slot 0.
    pub atoms: AtomSet,
}

#[derive(Debug, Clone, Copy)]
pub struct PenaltyTerm {
    pub value: Var,
    pub used: usize,
    pub dropped: usize,
}

/// Largest tolerated share of dropped penalty samples.
pub const MAX_DROPPED_FRACTION: f64 = 0.1;

/// Posterior-regularization penalty
/// `F(ψ, φ) = −E_{p̃_r(θ) q_ψ(x|θ)} [ln q_φ(θ | x) − ln Ẑ(x)]`,
/// with `x` drawn by reparameterization so that gradients reach ψ. φ is
/// bound as constants: no gradient flows to it.
///
/// Samples whose `x` or φ evaluation is non-finite are dropped and the
/// estimate is recomputed on the rest; more than 10% dropped rejects the
/// batch.
pub fn npr_penalty<P: TapeDensity + ?Sized, Q: TapeDensity + ?Sized>(
    tape: &mut Tape,
    psi: &P,
    psi_params: &[Var],
    phi: &Q,
    batch: &PenaltyBatch,
) -> Result<PenaltyTerm, LossError> {
    let k = batch.draws_per_theta;
    if k < 1 {
        return Err(LossError::DrawsPerTheta);
    }
    let total = batch.theta.rows() * k;
    if total == 0 {
        return Err(LossError::EmptyBatch);
    }
    if batch.noise.rows() != total || batch.atoms.elements() != total {
        return Err(LossError::Batch(format!(
            "{total} penalty samples but {} noise rows and {} atom groups",
            batch.noise.rows(),
            batch.atoms.elements()
        )));
    }
    let theta_rep: Vec<usize> = (0..total).map(|i| i / k).collect();
    let phi_params = phi.bind(tape, false);
    let mut keep: Vec<usize> = (0..total).collect();
    // Rows are independent, so re-evaluating a subset reproduces the kept
    // values exactly while keeping non-finite rows out of the gradient.
    loop {
        let th_idx: Vec<usize> = keep.iter().map(|&i| theta_rep[i]).collect();
        let th = tape.constant(batch.theta.select_rows(&th_idx));
        let noise = tape.constant(batch.noise.select_rows(&keep));
        let x = psi.sample_on(tape, psi_params, th, noise)?;
        let bad_x: Vec<usize> = tape
            .value(x)
            .row_iter()
            .enumerate()
            .filter(|(_, r)| r.iter().any(|v| !v.is_finite()))
            .map(|(i, _)| i)
            .collect();
        let per = if bad_x.is_empty() {
            let atoms = if keep.len() == total {
                batch.atoms.clone()
            } else {
                batch.atoms.select(&keep)
            };
            let per = normalized_log_posterior(tape, phi, &phi_params, x, &atoms)?;
            let bad: Vec<usize> = tape
                .value(per)
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_finite())
                .map(|(i, _)| i)
                .collect();
            if bad.is_empty() {
                Some(per)
            } else {
                keep = drop_positions(&keep, &bad);
                None
            }
        } else {
            keep = drop_positions(&keep, &bad_x);
            None
        };
        let dropped = total - keep.len();
        if dropped as f64 > MAX_DROPPED_FRACTION * total as f64 || keep.is_empty() {
            return Err(LossError::TooManyDropped { dropped, total });
        }
        if let Some(per) = per {
            let m = tape.mean(per);
            return Ok(PenaltyTerm {
                value: tape.neg(m),
                used: keep.len(),
                dropped,
            });
        }
    }
}

fn drop_positions(keep: &[usize], positions: &[usize]) -> Vec<usize> {
    keep.iter()
        .enumerate()
        .filter(|(p, _)| positions.binary_search(p).is_err())
        .map(|(_, &i)| i)
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct RegularizedTerm {
    pub value: Var,
    pub snl: Var,
    pub penalty: Option<PenaltyTerm>,
}

/// `L_SNL(ψ) + λ·F(ψ, φ)`. With `λ = 0` the penalty is not evaluated and
/// the result is the SNL loss node itself.
#[allow(clippy::too_many_arguments)]
pub fn regularized_loss<P: TapeDensity + ?Sized, Q: TapeDensity + ?Sized>(
    tape: &mut Tape,
    psi: &P,
    psi_params: &[Var],
    phi: &Q,
    theta: &Matrix,
    x: &Matrix,
    penalty: Option<&PenaltyBatch>,
    lambda: f64,
) -> Result<RegularizedTerm, LossError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LossError::Lambda(lambda));
    }
    let snl = snl_loss(tape, psi, psi_params, theta, x)?;
    if lambda == 0.0 {
        return Ok(RegularizedTerm {
            value: snl,
            snl,
            penalty: None,
        });
    }
    let batch = penalty.ok_or(LossError::MissingPenaltyBatch)?;
    let term = npr_penalty(tape, psi, psi_params, phi, batch)?;
    let scaled = tape.scale(term.value, lambda);
    Ok(RegularizedTerm {
        value: tape.add(snl, scaled),
        snl,
        penalty: Some(term),
    })
}
