//! Small models with exactly known behaviour for loss tests.

use crate::density::{DensityError, TapeDensity};
use crate::diffcore::{Matrix, Mlp, ShapeError, Tape, Var};
use rand::RngCore;

/// `q(event = j | condition = i) = softmax(logits[i])[j]` over integer-coded
/// one-column events and conditions.
#[derive(Debug, Clone)]
pub struct Tabular {
    pub logits: Matrix,
}

impl Tabular {
    pub fn from_probs(probs: &[Vec<f64>]) -> Self {
        let rows: Vec<Vec<f64>> = probs.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        Self {
            logits: Matrix::from_rows(&rows),
        }
    }

    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.logits
            .row_iter()
            .map(|r| {
                let l = crate::diffcore::logsumexp(r);
                r.iter().map(|v| (v - l).exp()).collect()
            })
            .collect()
    }

    fn one_hot(&self, tape: &Tape, v: Var, width: usize) -> Matrix {
        let vals = tape.value(v);
        let mut m = Matrix::zeros(vals.rows(), width);
        for i in 0..vals.rows() {
            m.set(i, vals.get(i, 0).round() as usize, 1.0);
        }
        m
    }
}

impl TapeDensity for Tabular {
    fn event_dim(&self) -> usize {
        1
    }

    fn condition_dim(&self) -> usize {
        1
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        vec![if trainable {
            tape.param(self.logits.clone())
        } else {
            tape.constant(self.logits.clone())
        }]
    }

    fn log_prob_on(&self, tape: &mut Tape, params: &[Var], event: Var, condition: Var) -> Result<Var, DensityError> {
        let (nc, ne) = self.logits.shape();
        let c = self.one_hot(tape, condition, nc);
        let e = self.one_hot(tape, event, ne);
        let c = tape.constant(c);
        let e = tape.constant(e);
        let rows = tape.matmul(c, params[0]);
        let lse = tape.logsumexp_rows(rows);
        let lse = tape.neg(lse);
        let ls = tape.add_col(rows, lse);
        let picked = tape.mul(ls, e);
        Ok(tape.sum_rows(picked))
    }

    fn sample_on(&self, _: &mut Tape, _: &[Var], _: Var, _: Var) -> Result<Var, DensityError> {
        Err(DensityError::Config("tabular models are not reparameterizable".into()))
    }
}

/// `x = μ(θ) + σ·ε` with `μ` an MLP; reparameterizable and cheap. A
/// noise entry of `+∞` yields a non-finite sample.
pub struct Shift {
    pub net: Mlp,
    pub sigma: f64,
}

impl TapeDensity for Shift {
    fn event_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn condition_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.net.bind(tape, trainable)
    }

    fn log_prob_on(&self, tape: &mut Tape, params: &[Var], event: Var, condition: Var) -> Result<Var, DensityError> {
        let mu = self.net.forward(tape, params, condition)?;
        let d = tape.sub(event, mu);
        let z = tape.scale(d, 1.0 / self.sigma);
        let z2 = tape.square(z);
        let s = tape.sum_rows(z2);
        let s = tape.scale(s, -0.5);
        let dim = self.event_dim() as f64;
        Ok(tape.add_scalar(s, -dim * (0.5 * (2.0 * std::f64::consts::PI).ln() + self.sigma.ln())))
    }

    fn sample_on(&self, tape: &mut Tape, params: &[Var], condition: Var, noise: Var) -> Result<Var, DensityError> {
        if tape.shape(noise).1 != self.event_dim() {
            return Err(ShapeError::new("noise columns", self.event_dim(), tape.shape(noise).1).into());
        }
        let mu = self.net.forward(tape, params, condition)?;
        let e = tape.scale(noise, self.sigma);
        Ok(tape.add(mu, e))
    }
}

/// Discrete likelihood over integer-coded θ and x, for nested-MC checks.
pub struct TableLikelihood {
    pub probs: Vec<Vec<f64>>,
}

impl crate::losses::LikelihoodModel for TableLikelihood {
    fn log_lik_many(&self, x: &[f64], thetas: &Matrix) -> Vec<f64> {
        thetas
            .row_iter()
            .map(|t| self.probs[t[0] as usize][x[0] as usize].ln())
            .collect()
    }

    fn sample_each(&self, thetas: &Matrix, rng: &mut dyn RngCore) -> Matrix {
        use rand::Rng;
        let data = thetas
            .row_iter()
            .map(|t| {
                let row = &self.probs[t[0] as usize];
                let mut u: f64 = rng.random();
                let mut j = row.len() - 1;
                for (k, p) in row.iter().enumerate() {
                    if u < *p {
                        j = k;
                        break;
                    }
                    u -= p;
                }
                j as f64
            })
            .collect();
        Matrix::from_vec(thetas.rows(), 1, data)
    }
}
