use crate::diffcore::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Same moments, new step size.
    pub fn with_learning_rate(&self, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..self.clone()
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Bias-corrected adaptive-moment update, in place.
    pub fn update(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
            }
        }
    }
}
