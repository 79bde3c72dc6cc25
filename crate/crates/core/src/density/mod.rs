//! Conditional density estimators `q(event | condition)`.
//!
//! Three families share one interface: a diagonal Gaussian, a Gaussian
//! mixture and a masked affine autoregressive flow. Events and conditions
//! are whitened with fixed per-coordinate statistics before entering the
//! networks; the change of variables is accounted for in every log density.

mod checkpoint;
mod flow;
mod gaussian;
mod mixture;
mod standardize;

pub use checkpoint::{Checkpoint, NamedParam, CHECKPOINT_FORMAT_VERSION};
pub use standardize::Standardizer;

use crate::diffcore::{Matrix, ShapeError, Tape, Var};
use flow::AffineFlow;
use gaussian::GaussianNet;
use mixture::MixtureNet;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    Gaussian,
    Mixture,
    Flow,
}

impl DensityKind {
    /// Whether samples can be written as a differentiable map of noise.
    pub fn reparameterizable(self) -> bool {
        !matches!(self, DensityKind::Mixture)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub kind: DensityKind,
    /// Width of every hidden layer.
    pub hidden: usize,
    /// Hidden layers of the conditioner (or of the flow's context embedding).
    pub hidden_layers: usize,
    pub flow_layers: usize,
    pub components: usize,
    pub scale_floor: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            kind: DensityKind::Flow,
            hidden: 50,
            hidden_layers: 2,
            flow_layers: 5,
            components: 5,
            scale_floor: 1e-3,
        }
    }
}

impl DensityConfig {
    pub fn with_kind(kind: DensityKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum DensityError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("{0:?} densities cannot be sampled by reparameterization")]
    NotReparameterizable(DensityKind),
    #[error("invalid density configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn half_log_two_pi() -> f64 {
    0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// `softplus(raw) + floor`.
pub(crate) fn positive_scale(tape: &mut Tape, raw: Var, floor: f64) -> Var {
    let s = tape.softplus(raw);
    tape.add_scalar(s, floor)
}

/// `rows × cols` matrix of independent standard normal draws.
pub fn gaussian_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// A conditional density that can be evaluated on a [`Tape`].
///
/// Parameters are bound once per tape with [`TapeDensity::bind`]; the
/// remaining methods take the bound variables so that gradients can flow to
/// them or, when bound as constants, be cut off.
pub trait TapeDensity {
    fn event_dim(&self) -> usize;
    fn condition_dim(&self) -> usize;
    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var>;

    /// `log q(eventᵢ | conditionᵢ)` as an `n × 1` column.
    fn log_prob_on(&self, tape: &mut Tape, params: &[Var], event: Var, condition: Var) -> Result<Var, DensityError>;

    /// Log densities of `per_condition` consecutive atom rows for each
    /// condition row. `atoms` has `conditions · per_condition` rows.
    fn log_prob_atoms_on(
        &self,
        tape: &mut Tape,
        params: &[Var],
        atoms: Var,
        condition: Var,
        per_condition: usize,
    ) -> Result<Var, DensityError> {
        let c = tape.repeat_rows(condition, per_condition);
        self.log_prob_on(tape, params, atoms, c)
    }

    /// One sample per condition row, as a differentiable function of the
    /// standard normal `noise` (same row count, `event_dim` columns).
    fn sample_on(&self, tape: &mut Tape, params: &[Var], condition: Var, noise: Var) -> Result<Var, DensityError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Body {
    Gaussian(GaussianNet),
    Mixture(MixtureNet),
    Flow(AffineFlow),
}

/// A trainable conditional density of one of the [`DensityKind`] families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDensity {
    config: DensityConfig,
    event_dim: usize,
    condition_dim: usize,
    event_norm: Standardizer,
    condition_norm: Standardizer,
    body: Body,
}

impl ConditionalDensity {
    fn validate(config: &DensityConfig, event_dim: usize, condition_dim: usize) -> Result<(), DensityError> {
        if event_dim == 0 || condition_dim == 0 {
            return Err(DensityError::Config("event and condition dimensions must be positive".into()));
        }
        if config.hidden == 0 || config.hidden_layers == 0 {
            return Err(DensityError::Config("need at least one hidden layer of positive width".into()));
        }
        if config.kind == DensityKind::Flow && config.flow_layers == 0 {
            return Err(DensityError::Config("a flow needs at least one layer".into()));
        }
        if config.kind == DensityKind::Mixture && config.components == 0 {
            return Err(DensityError::Config("a mixture needs at least one component".into()));
        }
        if !(config.scale_floor > 0.0 && config.scale_floor < 1.0) {
            return Err(DensityError::Config("scale floor must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Randomly initialised model.
    pub fn new<R: Rng + ?Sized>(
        config: DensityConfig,
        event_dim: usize,
        condition_dim: usize,
        rng: &mut R,
    ) -> Result<Self, DensityError> {
        Self::validate(&config, event_dim, condition_dim)?;
        let body = match config.kind {
            DensityKind::Gaussian => Body::Gaussian(GaussianNet::new(&config, event_dim, condition_dim, rng)),
            DensityKind::Mixture => Body::Mixture(MixtureNet::new(&config, event_dim, condition_dim, rng)),
            DensityKind::Flow => Body::Flow(AffineFlow::new(&config, event_dim, condition_dim, rng)),
        };
        Ok(Self::assemble(config, event_dim, condition_dim, body))
    }

    /// Model whose (whitened) density is standard normal for every
    /// condition.
    pub fn identity(config: DensityConfig, event_dim: usize, condition_dim: usize) -> Result<Self, DensityError> {
        Self::validate(&config, event_dim, condition_dim)?;
        let body = match config.kind {
            DensityKind::Gaussian => Body::Gaussian(GaussianNet::identity(&config, event_dim, condition_dim)),
            DensityKind::Mixture => Body::Mixture(MixtureNet::identity(&config, event_dim, condition_dim)),
            DensityKind::Flow => Body::Flow(AffineFlow::identity(&config, event_dim, condition_dim)),
        };
        Ok(Self::assemble(config, event_dim, condition_dim, body))
    }

    fn assemble(config: DensityConfig, event_dim: usize, condition_dim: usize, body: Body) -> Self {
        Self {
            config,
            event_dim,
            condition_dim,
            event_norm: Standardizer::identity(event_dim),
            condition_norm: Standardizer::identity(condition_dim),
            body,
        }
    }

    pub fn kind(&self) -> DensityKind {
        self.config.kind
    }

    pub fn config(&self) -> &DensityConfig {
        &self.config
    }

    pub fn event_standardizer(&self) -> &Standardizer {
        &self.event_norm
    }

    pub fn condition_standardizer(&self) -> &Standardizer {
        &self.condition_norm
    }

    pub fn set_standardization(&mut self, event: Standardizer, condition: Standardizer) -> Result<(), DensityError> {
        if event.dim() != self.event_dim {
            return Err(ShapeError::new("event standardizer", self.event_dim, event.dim()).into());
        }
        if condition.dim() != self.condition_dim {
            return Err(ShapeError::new("condition standardizer", self.condition_dim, condition.dim()).into());
        }
        self.event_norm = event;
        self.condition_norm = condition;
        Ok(())
    }

    /// Fits whitening statistics to paired event and condition rows.
    pub fn fit_standardization(&mut self, events: &Matrix, conditions: &Matrix) -> Result<(), DensityError> {
        let e: Vec<&[f64]> = events.row_iter().collect();
        let c: Vec<&[f64]> = conditions.row_iter().collect();
        self.set_standardization(
            Standardizer::fit(&e, self.event_dim),
            Standardizer::fit(&c, self.condition_dim),
        )
    }

    pub fn params(&self) -> Vec<&Matrix> {
        match &self.body {
            Body::Gaussian(b) => b.params(),
            Body::Mixture(b) => b.params(),
            Body::Flow(b) => b.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match &mut self.body {
            Body::Gaussian(b) => b.params_mut(),
            Body::Mixture(b) => b.params_mut(),
            Body::Flow(b) => b.params_mut(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match &self.body {
            Body::Gaussian(b) => b.param_names(),
            Body::Mixture(b) => b.param_names(),
            Body::Flow(b) => b.param_names(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    fn check_cols(&self, tape: &Tape, v: Var, expected: usize, what: &'static str) -> Result<(), ShapeError> {
        let got = tape.shape(v).1;
        if got != expected {
            return Err(ShapeError::new(what, expected, got));
        }
        Ok(())
    }

    /// Per-condition features that the event density is built from. Row
    /// `i` depends only on condition row `i`.
    pub fn context_on(&self, tape: &mut Tape, params: &[Var], condition: Var) -> Result<Var, DensityError> {
        self.check_cols(tape, condition, self.condition_dim, "condition columns")?;
        let c = self.condition_norm.whiten_on(tape, condition);
        Ok(match &self.body {
            Body::Gaussian(b) => b.context(tape, params, c)?,
            Body::Mixture(b) => b.context(tape, params, c)?,
            Body::Flow(b) => b.context(tape, params, c)?,
        })
    }

    /// Log density of event rows given matching rows of [`Self::context_on`].
    pub fn log_prob_with_context(
        &self,
        tape: &mut Tape,
        params: &[Var],
        event: Var,
        context: Var,
    ) -> Result<Var, DensityError> {
        self.check_cols(tape, event, self.event_dim, "event columns")?;
        let (er, cr) = (tape.shape(event).0, tape.shape(context).0);
        if er != cr {
            return Err(ShapeError::new("context rows", er, cr).into());
        }
        let e = self.event_norm.whiten_on(tape, event);
        let lp = match &self.body {
            Body::Gaussian(b) => b.log_prob(tape, e, context),
            Body::Mixture(b) => b.log_prob(tape, e, context),
            Body::Flow(b) => b.log_prob(tape, params, e, context),
        };
        let ls = self.event_norm.log_scale();
        Ok(if ls == 0.0 { lp } else { tape.add_scalar(lp, -ls) })
    }

    /// Log densities of `events` (n × d) under `conditions` (n × c).
    pub fn log_prob(&self, events: &Matrix, conditions: &Matrix) -> Result<Vec<f64>, DensityError> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let e = tape.constant(events.clone());
        let c = tape.constant(conditions.clone());
        let lp = self.log_prob_on(&mut tape, &p, e, c)?;
        Ok(tape.value(lp).as_slice().to_vec())
    }

    /// Log densities of many events under a single condition; the context is
    /// computed once.
    pub fn log_prob_given(&self, events: &Matrix, condition: &[f64]) -> Result<Vec<f64>, DensityError> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let c = tape.constant(Matrix::row_vector(condition));
        let ctx = self.context_on(&mut tape, &p, c)?;
        let ctx = tape.repeat_rows(ctx, events.rows());
        let e = tape.constant(events.clone());
        let lp = self.log_prob_with_context(&mut tape, &p, e, ctx)?;
        Ok(tape.value(lp).as_slice().to_vec())
    }

    /// `n` draws from `q(· | condition)`.
    pub fn sample<R: Rng + ?Sized>(&self, condition: &[f64], n: usize, rng: &mut R) -> Result<Matrix, DensityError> {
        let conditions = Matrix::from_vec(
            n,
            condition.len(),
            condition.iter().copied().cycle().take(n * condition.len()).collect(),
        );
        self.sample_each(&conditions, rng)
    }

    /// One draw per condition row.
    pub fn sample_each<R: Rng + ?Sized>(&self, conditions: &Matrix, rng: &mut R) -> Result<Matrix, DensityError> {
        let n = conditions.rows();
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let c = tape.constant(conditions.clone());
        if let Body::Mixture(b) = &self.body {
            let ctx = self.context_on(&mut tape, &p, c)?;
            let ctx = tape.value(ctx).clone();
            let mut out = Matrix::zeros(n, self.event_dim);
            for i in 0..n {
                let z = b.sample_from_context(ctx.row(i), rng);
                let x: Vec<f64> = z
                    .iter()
                    .zip(self.event_norm.std())
                    .zip(self.event_norm.mean())
                    .map(|((z, s), m)| z * s + m)
                    .collect();
                out.row_mut(i).copy_from_slice(&x);
            }
            return Ok(out);
        }
        let noise = tape.constant(gaussian_noise(n, self.event_dim, rng));
        let x = self.sample_on(&mut tape, &p, c, noise)?;
        Ok(tape.value(x).clone())
    }

    /// Base noise that [`TapeDensity::sample_on`] would map to `events`.
    /// Available for the reparameterizable kinds.
    pub fn to_noise(&self, events: &Matrix, conditions: &Matrix) -> Result<Matrix, DensityError> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let c = tape.constant(conditions.clone());
        let ctx = self.context_on(&mut tape, &p, c)?;
        let e = tape.constant(events.clone());
        self.check_cols(&tape, e, self.event_dim, "event columns")?;
        let e = self.event_norm.whiten_on(&mut tape, e);
        let u = match &self.body {
            Body::Flow(b) => b.to_base(&mut tape, &p, e, ctx).0,
            Body::Gaussian(_) => {
                let mu = tape.slice_cols(ctx, 0, self.event_dim);
                let raw = tape.slice_cols(ctx, self.event_dim, 2 * self.event_dim);
                let s = positive_scale(&mut tape, raw, self.config.scale_floor);
                let d = tape.sub(e, mu);
                tape.div(d, s)
            }
            Body::Mixture(_) => return Err(DensityError::NotReparameterizable(self.kind())),
        };
        Ok(tape.value(u).clone())
    }

    /// `max |sample(to_noise(event)) − event|` over all rows.
    pub fn round_trip(&self, events: &Matrix, conditions: &Matrix) -> Result<f64, DensityError> {
        let u = self.to_noise(events, conditions)?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let c = tape.constant(conditions.clone());
        let n = tape.constant(u);
        let x = self.sample_on(&mut tape, &p, c, n)?;
        Ok(tape.value(x).max_abs_diff(events))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self)
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self, DensityError> {
        checkpoint.restore()
    }
}

impl TapeDensity for ConditionalDensity {
    fn event_dim(&self) -> usize {
        self.event_dim
    }

    fn condition_dim(&self) -> usize {
        self.condition_dim
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|m| {
                if trainable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect()
    }

    fn log_prob_on(&self, tape: &mut Tape, params: &[Var], event: Var, condition: Var) -> Result<Var, DensityError> {
        let ctx = self.context_on(tape, params, condition)?;
        self.log_prob_with_context(tape, params, event, ctx)
    }

    fn log_prob_atoms_on(
        &self,
        tape: &mut Tape,
        params: &[Var],
        atoms: Var,
        condition: Var,
        per_condition: usize,
    ) -> Result<Var, DensityError> {
        let ctx = self.context_on(tape, params, condition)?;
        let ctx = tape.repeat_rows(ctx, per_condition);
        self.log_prob_with_context(tape, params, atoms, ctx)
    }

    fn sample_on(&self, tape: &mut Tape, params: &[Var], condition: Var, noise: Var) -> Result<Var, DensityError> {
        self.check_cols(tape, noise, self.event_dim, "noise columns")?;
        let ctx = self.context_on(tape, params, condition)?;
        let z = match &self.body {
            Body::Gaussian(b) => b.sample(tape, ctx, noise),
            Body::Flow(b) => b.sample(tape, params, ctx, noise),
            Body::Mixture(_) => return Err(DensityError::NotReparameterizable(self.kind())),
        };
        Ok(self.event_norm.unwhiten_on(tape, z))
    }
}
