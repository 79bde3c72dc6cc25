use super::{adam::Adam, InferenceError, RoundDataset};
use crate::density::{gaussian_noise, ConditionalDensity, DensityError, TapeDensity};
use crate::diffcore::{Matrix, Tape};
use crate::losses::{apt_atomic_loss, regularized_loss, snl_loss, AtomicNormalizer, LossError, PenaltyBatch};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Contrastive atoms per element, own θ included.
    pub atoms: usize,
    /// Likelihood draws per θ in the penalty.
    pub penalty_draws: usize,
    pub max_lr_halvings: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 50,
            validation_fraction: 0.1,
            patience: 20,
            max_epochs: 300,
            atoms: 10,
            penalty_draws: 1,
            max_lr_halvings: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(format!("validation_fraction must lie in [0, 1), got {}", self.validation_fraction));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err("batch_size, max_epochs and patience must be positive".into());
        }
        if self.atoms < 2 || self.penalty_draws == 0 {
            return Err("need at least 2 atoms and 1 penalty draw".into());
        }
        Ok(())
    }
}

/// Shuffled `(train, validation)` index split. Validation gets
/// `round(fraction·n)` entries, kept within `1..n` when `n ≥ 2`; a single
/// entry is used for both.
pub fn split_indices<R: Rng + ?Sized>(n: usize, fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    if n < 2 {
        return (idx.clone(), idx);
    }
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// One epoch of minibatches over `indices`, reshuffled.
pub fn minibatches<R: Rng + ?Sized>(indices: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx = indices.to_vec();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub lambda: f64,
    pub epochs: usize,
    /// Epoch whose ψ was restored; 0 means the incoming parameters, kept
    /// only when no epoch had a finite validation loss.
    pub best_epoch: usize,
    /// Mean regularized training loss of the restored epoch.
    pub train_loss: f64,
    /// Mean training SNL loss of the restored epoch.
    pub train_snl: f64,
    pub val_loss: f64,
    /// Validation SNL loss after the last epoch run.
    pub final_val_loss: f64,
    pub penalty: Option<f64>,
    pub dropped_penalty_samples: usize,
    pub lr_halvings: usize,
    pub phi_trained: bool,
    pub train_size: usize,
    pub val_size: usize,
}

struct EpochStats {
    loss: f64,
    snl: f64,
    penalty: Option<f64>,
    dropped: usize,
}

fn is_divergence(e: &LossError) -> bool {
    matches!(
        e,
        LossError::NonFinite { .. } | LossError::BadNormalizer { .. } | LossError::TooManyDropped { .. }
    )
}

/// Loss, then gradients of every bound parameter; `Ok(None)` on divergence.
fn gradients(
    tape: &Tape,
    loss: crate::diffcore::Var,
    params: &[crate::diffcore::Var],
) -> Result<Option<Vec<Matrix>>, InferenceError> {
    if !tape.scalar(loss).is_finite() {
        return Ok(None);
    }
    let g = tape.backward(loss).map_err(|e| InferenceError::Training(e.to_string()))?;
    let grads: Vec<Matrix> = params
        .iter()
        .map(|&p| {
            let (r, c) = tape.shape(p);
            g.get_or_zeros(p, r, c)
        })
        .collect();
    if grads.iter().any(|m| !m.all_finite()) {
        return Ok(None);
    }
    Ok(Some(grads))
}

struct Data<'a> {
    theta: &'a Matrix,
    x: &'a Matrix,
    train: &'a [usize],
    /// Training θ rows, the pool contrastive atoms come from.
    pool: Matrix,
    /// Entry index to its row in `pool`.
    position: Vec<usize>,
    log_prior: &'a dyn Fn(&[f64]) -> f64,
}

fn phi_epoch<R: Rng + ?Sized>(
    phi: &mut ConditionalDensity,
    adam: &mut Adam,
    data: &Data<'_>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Option<f64>, InferenceError> {
    let normalizer = AtomicNormalizer::new(cfg.atoms);
    let mut total = 0.0;
    let mut count = 0;
    for batch in minibatches(data.train, cfg.batch_size, rng) {
        let own = data.theta.select_rows(&batch);
        let own_index: Vec<usize> = batch.iter().map(|&j| data.position[j]).collect();
        let atoms = normalizer.draw(&own, Some(&own_index), &data.pool, data.log_prior, rng)?;
        let mut tape = Tape::new();
        let params = phi.bind(&mut tape, true);
        let loss = match apt_atomic_loss(&mut tape, phi, &params, &data.x.select_rows(&batch), &atoms) {
            Ok(l) => l,
            Err(e) if is_divergence(&e) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let Some(grads) = gradients(&tape, loss, &params)? else {
            return Ok(None);
        };
        total += tape.scalar(loss) * batch.len() as f64;
        count += batch.len();
        adam.update(phi.params_mut(), &grads);
    }
    if phi.params().iter().any(|m| !m.all_finite()) {
        return Ok(None);
    }
    Ok(Some(total / count as f64))
}

#[allow(clippy::too_many_arguments)]
fn psi_epoch<R: Rng + ?Sized>(
    psi: &mut ConditionalDensity,
    phi: &ConditionalDensity,
    adam: &mut Adam,
    data: &Data<'_>,
    lambda: f64,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Option<EpochStats>, InferenceError> {
    let normalizer = AtomicNormalizer::new(cfg.atoms);
    let k = cfg.penalty_draws;
    let x_dim = data.x.cols();
    let mut stats = EpochStats {
        loss: 0.0,
        snl: 0.0,
        penalty: (lambda > 0.0).then_some(0.0),
        dropped: 0,
    };
    let mut count = 0;
    for batch in minibatches(data.train, cfg.batch_size, rng) {
        let theta = data.theta.select_rows(&batch);
        let penalty = if lambda > 0.0 {
            let rep: Vec<usize> = batch.iter().flat_map(|&j| std::iter::repeat_n(j, k)).collect();
            let own = data.theta.select_rows(&rep);
            let own_index: Vec<usize> = rep.iter().map(|&j| data.position[j]).collect();
            Some(PenaltyBatch {
                atoms: normalizer.draw(&own, Some(&own_index), &data.pool, data.log_prior, rng)?,
                theta: theta.clone(),
                noise: gaussian_noise(batch.len() * k, x_dim, rng),
                draws_per_theta: k,
            })
        } else {
            None
        };
        let mut tape = Tape::new();
        let params = psi.bind(&mut tape, true);
        let term = match regularized_loss(
            &mut tape,
            psi,
            &params,
            phi,
            &theta,
            &data.x.select_rows(&batch),
            penalty.as_ref(),
            lambda,
        ) {
            Ok(t) => t,
            Err(e) if is_divergence(&e) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let Some(grads) = gradients(&tape, term.value, &params)? else {
            return Ok(None);
        };
        let w = batch.len() as f64;
        stats.loss += tape.scalar(term.value) * w;
        stats.snl += tape.scalar(term.snl) * w;
        if let (Some(p), Some(t)) = (stats.penalty.as_mut(), term.penalty) {
            *p += tape.scalar(t.value) * w;
            stats.dropped += t.dropped;
        }
        count += batch.len();
        adam.update(psi.params_mut(), &grads);
    }
    if psi.params().iter().any(|m| !m.all_finite()) {
        return Ok(None);
    }
    let n = count as f64;
    stats.loss /= n;
    stats.snl /= n;
    if let Some(p) = stats.penalty.as_mut() {
        *p /= n;
    }
    Ok(Some(stats))
}

/// Mean `−ln q_ψ(x | θ)` over `rows`.
pub fn validation_loss(psi: &ConditionalDensity, theta: &Matrix, x: &Matrix, rows: &[usize]) -> Result<f64, DensityError> {
    let mut tape = Tape::new();
    let params = psi.bind(&mut tape, false);
    match snl_loss(&mut tape, psi, &params, &theta.select_rows(rows), &x.select_rows(rows)) {
        Ok(l) => Ok(tape.scalar(l)),
        Err(LossError::NonFinite { .. }) => Ok(f64::INFINITY),
        Err(LossError::Density(e)) => Err(e),
        Err(e) => Err(DensityError::Config(e.to_string())),
    }
}

fn set_params(model: &mut ConditionalDensity, values: &[Matrix]) {
    for (p, v) in model.params_mut().into_iter().zip(values) {
        p.clone_from(v);
    }
}

fn snapshot(model: &ConditionalDensity) -> Vec<Matrix> {
    model.params().into_iter().cloned().collect()
}

/// Alternating training on the whole dataset: each epoch runs a φ epoch on
/// the atomic posterior loss, then a ψ epoch on the regularized loss. φ is
/// only trained when `λ > 0`, since with `λ = 0` it cannot affect ψ. Stops
/// after `patience` epochs without a validation SNL improvement and
/// restores the best ψ (with the φ of the same epoch).
///
/// Standardization of both models is refit to the dataset first. A
/// non-finite loss, gradient or parameter rolls the model back to the start
/// of the epoch, halves its learning rate and retries.
pub fn train_models<R: Rng + ?Sized>(
    psi: &mut ConditionalDensity,
    phi: &mut ConditionalDensity,
    dataset: &RoundDataset,
    lambda: f64,
    cfg: &TrainConfig,
    split_rng: &mut R,
    rng: &mut R,
) -> Result<TrainReport, InferenceError> {
    cfg.validate().map_err(InferenceError::Config)?;
    if dataset.is_empty() {
        return Err(InferenceError::Dataset("cannot train on an empty dataset".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(InferenceError::Config(format!("λ must be finite and nonnegative, got {lambda}")));
    }
    if lambda > 0.0 && !psi.kind().reparameterizable() {
        return Err(InferenceError::Config(format!(
            "a {:?} likelihood model cannot be regularized: it has no reparameterized sampler",
            psi.kind()
        )));
    }
    let theta = dataset.thetas();
    let x = dataset.xs();
    psi.fit_standardization(&x, &theta)?;
    phi.fit_standardization(&theta, &x)?;
    let (train, val) = split_indices(dataset.len(), cfg.validation_fraction, split_rng);
    let prior = dataset.prior().clone();
    let log_prior = move |t: &[f64]| prior.log_density(t);
    let data = Data {
        theta: &theta,
        x: &x,
        train: &train,
        pool: theta.select_rows(&train),
        position: {
            let mut p = vec![usize::MAX; theta.rows()];
            for (i, &j) in train.iter().enumerate() {
                p[j] = i;
            }
            p
        },
        log_prior: &log_prior,
    };
    let train_phi = lambda > 0.0;
    let mut psi_adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut phi_adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut halvings = 0;

    // Snapshots are taken after trained epochs; the incoming parameters are
    // kept only if no epoch produces a finite validation loss.
    let initial_val = validation_loss(psi, &theta, &x, &val)?;
    let mut best_val = f64::INFINITY;
    let mut best = (snapshot(psi), snapshot(phi));
    let mut best_epoch = 0;
    let mut best_stats: Option<EpochStats> = None;
    let mut final_val = initial_val;
    let mut since_best = 0;
    let mut epochs = 0;
    let mut penalty = None;
    let mut dropped = 0;

    while epochs < cfg.max_epochs && since_best < cfg.patience {
        epochs += 1;
        if train_phi {
            let start = (snapshot(phi), phi_adam.clone());
            loop {
                if phi_epoch(phi, &mut phi_adam, &data, cfg, rng)?.is_some() {
                    break;
                }
                halvings += 1;
                if halvings > cfg.max_lr_halvings {
                    return Err(InferenceError::Diverged {
                        epoch: epochs,
                        model: "posterior",
                        halvings: halvings - 1,
                    });
                }
                set_params(phi, &start.0);
                phi_adam = start.1.with_learning_rate(phi_adam.learning_rate * 0.5);
            }
        }
        let start = (snapshot(psi), psi_adam.clone());
        let stats = loop {
            if let Some(s) = psi_epoch(psi, phi, &mut psi_adam, &data, lambda, cfg, rng)? {
                break s;
            }
            halvings += 1;
            if halvings > cfg.max_lr_halvings {
                return Err(InferenceError::Diverged {
                    epoch: epochs,
                    model: "likelihood",
                    halvings: halvings - 1,
                });
            }
            set_params(psi, &start.0);
            psi_adam = start.1.with_learning_rate(psi_adam.learning_rate * 0.5);
        };
        penalty = stats.penalty;
        dropped += stats.dropped;
        final_val = validation_loss(psi, &theta, &x, &val)?;
        if final_val < best_val {
            best_val = final_val;
            best = (snapshot(psi), snapshot(phi));
            best_epoch = epochs;
            best_stats = Some(stats);
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    set_params(psi, &best.0);
    set_params(phi, &best.1);
    let (train_loss, train_snl) = match &best_stats {
        Some(s) => (s.loss, s.snl),
        None => {
            let l = validation_loss(psi, &theta, &x, &train)?;
            (l, l)
        }
    };
    Ok(TrainReport {
        lambda,
        epochs,
        best_epoch,
        train_loss,
        train_snl,
        val_loss: if best_epoch == 0 { initial_val } else { best_val },
        final_val_loss: final_val,
        penalty: best_stats.as_ref().and_then(|s| s.penalty).or(penalty),
        dropped_penalty_samples: dropped,
        lr_halvings: halvings,
        phi_trained: train_phi,
        train_size: train.len(),
        val_size: val.len(),
    })
}
