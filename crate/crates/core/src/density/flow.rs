use super::gaussian::mlp_param_names;
use super::{half_log_two_pi, positive_scale, DensityConfig};
use crate::diffcore::{softplus_inverse, Activation, Matrix, Mlp, ShapeError, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One masked autoregressive affine layer.
///
/// In the density direction it maps `v ↦ (v − m(v)) / s(v)`, where output
/// `i` of `m` and `s` only sees inputs of lower degree. Hidden units also
/// receive the context embedding, so every output depends on the condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MadeLayer {
    w_in: Matrix,
    w_ctx: Matrix,
    b_hidden: Matrix,
    w_out: Matrix,
    b_out: Matrix,
    mask_in: Matrix,
    mask_out: Matrix,
}

/// Input degree of each coordinate: `0..d` or reversed on odd layers.
fn input_degrees(dim: usize, reversed: bool) -> Vec<i64> {
    (0..dim as i64)
        .map(|i| if reversed { dim as i64 - 1 - i } else { i })
        .collect()
}

/// Hidden degrees cycle through `-1..d-1`; degree `-1` units see only the
/// context.
fn hidden_degrees(dim: usize, hidden: usize) -> Vec<i64> {
    (0..hidden).map(|h| (h % dim) as i64 - 1).collect()
}

impl MadeLayer {
    fn zeros(dim: usize, hidden: usize, embed: usize, reversed: bool, floor: f64) -> Self {
        let din = input_degrees(dim, reversed);
        let dh = hidden_degrees(dim, hidden);
        let mut mask_in = Matrix::zeros(dim, hidden);
        for (i, di) in din.iter().enumerate() {
            for (h, dhh) in dh.iter().enumerate() {
                if di <= dhh {
                    mask_in.set(i, h, 1.0);
                }
            }
        }
        let mut mask_out = Matrix::zeros(hidden, 2 * dim);
        for (h, dhh) in dh.iter().enumerate() {
            for (j, dj) in din.iter().enumerate() {
                if dhh < dj {
                    mask_out.set(h, j, 1.0);
                    mask_out.set(h, dim + j, 1.0);
                }
            }
        }
        let mut b_out = Matrix::zeros(1, 2 * dim);
        let raw = softplus_inverse(1.0 - floor);
        for j in 0..dim {
            b_out.set(0, dim + j, raw);
        }
        Self {
            w_in: Matrix::zeros(dim, hidden),
            w_ctx: Matrix::zeros(embed, hidden),
            b_hidden: Matrix::zeros(1, hidden),
            w_out: Matrix::zeros(hidden, 2 * dim),
            b_out,
            mask_in,
            mask_out,
        }
    }

    fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (m, gain) in [(&mut self.w_in, 1.0), (&mut self.w_ctx, 1.0), (&mut self.w_out, 0.01)] {
            let bound = gain * (6.0 / (m.rows() + m.cols()) as f64).sqrt();
            for x in m.as_mut_slice() {
                *x = rng.random_range(-bound..bound);
            }
        }
    }

    fn params(&self) -> [&Matrix; 5] {
        [&self.w_in, &self.w_ctx, &self.b_hidden, &self.w_out, &self.b_out]
    }

    fn params_mut(&mut self) -> [&mut Matrix; 5] {
        [
            &mut self.w_in,
            &mut self.w_ctx,
            &mut self.b_hidden,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    /// Shift and positive scale for every row of `v`.
    fn shift_scale(&self, tape: &mut Tape, p: &[Var], v: Var, embed: Var, floor: f64) -> (Var, Var) {
        let dim = self.w_in.rows();
        let mi = tape.constant(self.mask_in.clone());
        let w_in = tape.mul(p[0], mi);
        let a = tape.matmul(v, w_in);
        let c = tape.matmul(embed, p[1]);
        let a = tape.add(a, c);
        let a = tape.add_row(a, p[2]);
        let h = tape.tanh(a);
        let mo = tape.constant(self.mask_out.clone());
        let w_out = tape.mul(p[3], mo);
        let out = tape.matmul(h, w_out);
        let out = tape.add_row(out, p[4]);
        let m = tape.slice_cols(out, 0, dim);
        let raw = tape.slice_cols(out, dim, 2 * dim);
        (m, positive_scale(tape, raw, floor))
    }
}

/// Stack of masked affine layers over a shared tanh context embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct AffineFlow {
    dim: usize,
    floor: f64,
    embed: Mlp,
    layers: Vec<MadeLayer>,
}

impl AffineFlow {
    pub fn identity(cfg: &DensityConfig, event_dim: usize, condition_dim: usize) -> Self {
        let mut widths = vec![condition_dim];
        widths.extend(std::iter::repeat_n(cfg.hidden, cfg.hidden_layers));
        let embed = Mlp::zeros(&widths, Activation::Tanh);
        let e = embed.output_dim();
        let layers = (0..cfg.flow_layers)
            .map(|l| MadeLayer::zeros(event_dim, cfg.hidden, e, l % 2 == 1, cfg.scale_floor))
            .collect();
        Self {
            dim: event_dim,
            floor: cfg.scale_floor,
            embed,
            layers,
        }
    }

    pub fn new<R: Rng + ?Sized>(cfg: &DensityConfig, event_dim: usize, condition_dim: usize, rng: &mut R) -> Self {
        let mut flow = Self::identity(cfg, event_dim, condition_dim);
        let mut widths = vec![condition_dim];
        widths.extend(std::iter::repeat_n(cfg.hidden, cfg.hidden_layers));
        flow.embed = Mlp::new(&widths, Activation::Tanh, rng);
        for layer in &mut flow.layers {
            layer.randomize(rng);
        }
        flow
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = self.embed.params();
        for l in &self.layers {
            out.extend(l.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.embed.params_mut();
        for l in &mut self.layers {
            out.extend(l.params_mut());
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = mlp_param_names("embed", &self.embed);
        for l in 0..self.layers.len() {
            for n in ["w_in", "w_ctx", "b_hidden", "w_out", "b_out"] {
                out.push(format!("layer.{l}.{n}"));
            }
        }
        out
    }

    fn split<'a>(&self, p: &'a [Var]) -> (&'a [Var], impl Iterator<Item = &'a [Var]>) {
        let e = 2 * self.embed.layer_count();
        (&p[..e], p[e..].chunks(5))
    }

    pub fn context(&self, tape: &mut Tape, p: &[Var], condition: Var) -> Result<Var, ShapeError> {
        let (ep, _) = self.split(p);
        self.embed.forward(tape, ep, condition)
    }

    /// Maps events to base noise, returning the noise and `Σ ln s` per row.
    pub fn to_base(&self, tape: &mut Tape, p: &[Var], event: Var, ctx: Var) -> (Var, Option<Var>) {
        let (_, lp) = self.split(p);
        let mut v = event;
        let mut log_det: Option<Var> = None;
        for (layer, lp) in self.layers.iter().zip(lp) {
            let (m, s) = layer.shift_scale(tape, lp, v, ctx, self.floor);
            let d = tape.sub(v, m);
            v = tape.div(d, s);
            let ls = tape.log(s);
            let ls = tape.sum_rows(ls);
            log_det = Some(match log_det {
                Some(acc) => tape.add(acc, ls),
                None => ls,
            });
        }
        (v, log_det)
    }

    pub fn log_prob(&self, tape: &mut Tape, p: &[Var], event: Var, ctx: Var) -> Var {
        let (v, log_det) = self.to_base(tape, p, event, ctx);
        let sq = tape.square(v);
        let quad = tape.sum_rows(sq);
        let quad = tape.scale(quad, -0.5);
        let base = tape.add_scalar(quad, -(self.dim as f64) * half_log_two_pi());
        match log_det {
            Some(ld) => tape.sub(base, ld),
            None => base,
        }
    }

    /// Inverts each layer with `d` fixed-point passes; after pass `k` every
    /// coordinate of degree below `k` is exact, so the result is the exact
    /// inverse and its tape gradient is the gradient of the inverse.
    pub fn sample(&self, tape: &mut Tape, p: &[Var], ctx: Var, noise: Var) -> Var {
        let (_, lp) = self.split(p);
        let lp: Vec<&[Var]> = lp.collect();
        let mut u = noise;
        for (layer, lp) in self.layers.iter().zip(lp).rev() {
            let mut v = u;
            for _ in 0..self.dim {
                let (m, s) = layer.shift_scale(tape, lp, v, ctx, self.floor);
                let us = tape.mul(u, s);
                v = tape.add(us, m);
            }
            u = v;
        }
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_are_autoregressive() {
        for dim in 1..5 {
            for reversed in [false, true] {
                let l = MadeLayer::zeros(dim, 11, 3, reversed, 1e-3);
                // connectivity input j -> output i through any hidden unit
                let conn = crate::diffcore::Matrix::from_vec(
                    dim,
                    2 * dim,
                    (0..dim)
                        .flat_map(|j| {
                            let l = &l;
                            (0..2 * dim).map(move |i| {
                                (0..11)
                                    .map(|h| l.mask_in.get(j, h) * l.mask_out.get(h, i))
                                    .sum::<f64>()
                            })
                        })
                        .collect(),
                );
                let deg = input_degrees(dim, reversed);
                for j in 0..dim {
                    for i in 0..dim {
                        if deg[j] >= deg[i] {
                            assert_eq!(conn.get(j, i), 0.0);
                            assert_eq!(conn.get(j, dim + i), 0.0);
                        } else {
                            assert!(conn.get(j, i) > 0.0);
                        }
                    }
                }
                // every output gets at least one context-only hidden unit
                for i in 0..2 * dim {
                    assert!((0..11).any(|h| l.mask_out.get(h, i) > 0.0));
                }
            }
        }
    }
}
