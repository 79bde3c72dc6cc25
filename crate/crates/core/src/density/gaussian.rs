use super::{half_log_two_pi, positive_scale, DensityConfig};
use crate::diffcore::{softplus_inverse, Activation, Matrix, Mlp, ShapeError, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Diagonal Gaussian whose mean and scale are an MLP of the condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct GaussianNet {
    dim: usize,
    floor: f64,
    net: Mlp,
}

impl GaussianNet {
    fn widths(cfg: &DensityConfig, event_dim: usize, condition_dim: usize) -> Vec<usize> {
        let mut w = vec![condition_dim];
        w.extend(std::iter::repeat_n(cfg.hidden, cfg.hidden_layers));
        w.push(2 * event_dim);
        w
    }

    pub fn new<R: Rng + ?Sized>(cfg: &DensityConfig, event_dim: usize, condition_dim: usize, rng: &mut R) -> Self {
        let mut net = Mlp::new(&Self::widths(cfg, event_dim, condition_dim), Activation::Identity, rng);
        let last = net.layer_count() - 1;
        for x in net.weight_mut(last).as_mut_slice() {
            *x *= 0.1;
        }
        set_unit_scale_bias(net.bias_mut(last), event_dim, cfg.scale_floor);
        Self {
            dim: event_dim,
            floor: cfg.scale_floor,
            net,
        }
    }

    /// Standard normal regardless of the condition.
    pub fn identity(cfg: &DensityConfig, event_dim: usize, condition_dim: usize) -> Self {
        let mut net = Mlp::zeros(&Self::widths(cfg, event_dim, condition_dim), Activation::Identity);
        let last = net.layer_count() - 1;
        set_unit_scale_bias(net.bias_mut(last), event_dim, cfg.scale_floor);
        Self {
            dim: event_dim,
            floor: cfg.scale_floor,
            net,
        }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.net.params_mut()
    }

    pub fn param_names(&self) -> Vec<String> {
        mlp_param_names("net", &self.net)
    }

    pub fn context(&self, tape: &mut Tape, p: &[Var], condition: Var) -> Result<Var, ShapeError> {
        self.net.forward(tape, p, condition)
    }

    fn mean_and_scale(&self, tape: &mut Tape, ctx: Var) -> (Var, Var) {
        let mu = tape.slice_cols(ctx, 0, self.dim);
        let raw = tape.slice_cols(ctx, self.dim, 2 * self.dim);
        (mu, positive_scale(tape, raw, self.floor))
    }

    pub fn log_prob(&self, tape: &mut Tape, event: Var, ctx: Var) -> Var {
        let (mu, s) = self.mean_and_scale(tape, ctx);
        let diff = tape.sub(event, mu);
        let z = tape.div(diff, s);
        let z2 = tape.square(z);
        let quad = tape.sum_rows(z2);
        let quad = tape.scale(quad, -0.5);
        let ls = tape.log(s);
        let ls = tape.sum_rows(ls);
        let lp = tape.sub(quad, ls);
        tape.add_scalar(lp, -(self.dim as f64) * half_log_two_pi())
    }

    pub fn sample(&self, tape: &mut Tape, ctx: Var, noise: Var) -> Var {
        let (mu, s) = self.mean_and_scale(tape, ctx);
        let step = tape.mul(s, noise);
        tape.add(mu, step)
    }
}

/// Output bias layout `[shift (d) | raw scale (d)]`, with the raw part chosen
/// so that `softplus(raw) + floor = 1`.
pub(crate) fn set_unit_scale_bias(bias: &mut Matrix, dim: usize, floor: f64) {
    let raw = softplus_inverse(1.0 - floor);
    for j in 0..dim {
        bias.set(0, j, 0.0);
        bias.set(0, dim + j, raw);
    }
}

pub(crate) fn mlp_param_names(prefix: &str, mlp: &Mlp) -> Vec<String> {
    (0..mlp.layer_count())
        .flat_map(|l| [format!("{prefix}.{l}.weight"), format!("{prefix}.{l}.bias")])
        .collect()
}
