use super::gaussian::mlp_param_names;
use super::{half_log_two_pi, positive_scale, DensityConfig};
use crate::diffcore::{softplus, softplus_inverse, Activation, Matrix, Mlp, ShapeError, Tape, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Mixture of diagonal Gaussians with condition-dependent weights, means
/// and scales.
///
/// Output layout of the conditioner: `[logits (K) | means (K·d) | raw
/// scales (K·d)]`, component-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct MixtureNet {
    dim: usize,
    components: usize,
    floor: f64,
    net: Mlp,
}

impl MixtureNet {
    fn widths(cfg: &DensityConfig, event_dim: usize, condition_dim: usize) -> Vec<usize> {
        let mut w = vec![condition_dim];
        w.extend(std::iter::repeat_n(cfg.hidden, cfg.hidden_layers));
        w.push(cfg.components * (1 + 2 * event_dim));
        w
    }

    pub fn new<R: Rng + ?Sized>(cfg: &DensityConfig, event_dim: usize, condition_dim: usize, rng: &mut R) -> Self {
        let mut net = Mlp::new(&Self::widths(cfg, event_dim, condition_dim), Activation::Identity, rng);
        let last = net.layer_count() - 1;
        for x in net.weight_mut(last).as_mut_slice() {
            *x *= 0.1;
        }
        let k = cfg.components;
        let d = event_dim;
        let bias = net.bias_mut(last);
        let raw = softplus_inverse(1.0 - cfg.scale_floor);
        for j in 0..k * d {
            let m: f64 = StandardNormal.sample(rng);
            bias.set(0, k + j, m);
            bias.set(0, k + k * d + j, raw);
        }
        Self {
            dim: event_dim,
            components: k,
            floor: cfg.scale_floor,
            net,
        }
    }

    /// Equal-weight components, all standard normal.
    pub fn identity(cfg: &DensityConfig, event_dim: usize, condition_dim: usize) -> Self {
        let mut net = Mlp::zeros(&Self::widths(cfg, event_dim, condition_dim), Activation::Identity);
        let last = net.layer_count() - 1;
        let k = cfg.components;
        let raw = softplus_inverse(1.0 - cfg.scale_floor);
        for j in 0..k * event_dim {
            net.bias_mut(last).set(0, k + k * event_dim + j, raw);
        }
        Self {
            dim: event_dim,
            components: k,
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

    pub fn log_prob(&self, tape: &mut Tape, event: Var, ctx: Var) -> Var {
        let (k, d) = (self.components, self.dim);
        let logits = tape.slice_cols(ctx, 0, k);
        let means = tape.slice_cols(ctx, k, k + k * d);
        let raw = tape.slice_cols(ctx, k + k * d, k + 2 * k * d);
        let s = positive_scale(tape, raw, self.floor);

        let tiled: Vec<Var> = vec![event; k];
        let tiled = tape.concat_cols(&tiled);
        let diff = tape.sub(tiled, means);
        let z = tape.div(diff, s);
        let z2 = tape.square(z);
        let z2 = tape.scale(z2, -0.5);
        let ls = tape.log(s);
        let per_dim = tape.sub(z2, ls);
        let comp = tape.sum_col_groups(per_dim, d);
        let comp = tape.add_scalar(comp, -(d as f64) * half_log_two_pi());

        let norm = tape.logsumexp_rows(logits);
        let norm = tape.neg(norm);
        let log_w = tape.add_col(logits, norm);
        let joint = tape.add(comp, log_w);
        tape.logsumexp_rows(joint)
    }

    /// Ancestral sampling from already-evaluated conditioner outputs.
    pub fn sample_from_context<R: Rng + ?Sized>(&self, ctx: &[f64], rng: &mut R) -> Vec<f64> {
        let (k, d) = (self.components, self.dim);
        let logits = &ctx[..k];
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut comp = k - 1;
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                comp = i;
                break;
            }
            u -= wi;
        }
        (0..d)
            .map(|j| {
                let mu = ctx[k + comp * d + j];
                let s = softplus(ctx[k + k * d + comp * d + j]) + self.floor;
                let e: f64 = StandardNormal.sample(rng);
                mu + s * e
            })
            .collect()
    }
}
