use crate::diffcore::{Matrix, Tape, Var};
use serde::{Deserialize, Serialize};

/// Per-coordinate whitening `z = (v − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Spreads below this are treated as constant coordinates.
const MIN_STD: f64 = 1e-6;

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), std.len());
        let std = std.into_iter().map(|s| s.max(MIN_STD)).collect();
        Self { mean, std }
    }

    /// Column means and population standard deviations of `rows`.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R], dim: usize) -> Self {
        if rows.is_empty() {
            return Self::identity(dim);
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v.sqrt() < MIN_STD { 1.0 } else { v.sqrt() })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// `Σ ln stdⱼ`, the log-Jacobian of the inverse map.
    pub fn log_scale(&self) -> f64 {
        self.std.iter().map(|s| s.ln()).sum()
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.std.iter().all(|&s| s == 1.0)
    }

    pub fn whiten_on(&self, tape: &mut Tape, v: Var) -> Var {
        if self.is_identity() {
            return v;
        }
        let scale: Vec<f64> = self.std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = self.mean.iter().zip(&self.std).map(|(m, s)| -m / s).collect();
        tape.col_affine(v, &scale, &shift)
    }

    pub fn unwhiten_on(&self, tape: &mut Tape, z: Var) -> Var {
        if self.is_identity() {
            return z;
        }
        tape.col_affine(z, &self.std, &self.mean)
    }

    pub fn whiten(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn whiten_matrix(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for i in 0..out.rows() {
            let w = self.whiten(m.row(i));
            out.row_mut(i).copy_from_slice(&w);
        }
        out
    }
}
