use super::{Matrix, ShapeError, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
}

/// Fully connected network: `tanh` between layers, configurable activation
/// on the output layer.
///
/// Parameters are laid out as `[W₀, b₀, W₁, b₁, …]` with `Wₗ` of shape
/// `widths[l] × widths[l+1]` and `bₗ` a `1 × widths[l+1]` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    output: Activation,
    weights: Vec<Matrix>,
    biases: Vec<Matrix>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], output: Activation, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(widths, output);
        for w in &mut mlp.weights {
            let bound = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            for x in w.as_mut_slice() {
                *x = rng.random_range(-bound..bound);
            }
        }
        mlp
    }

    pub fn zeros(widths: &[usize], output: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "layer widths must be positive");
        let weights = widths
            .windows(2)
            .map(|w| Matrix::zeros(w[0], w[1]))
            .collect();
        let biases = widths[1..].iter().map(|&w| Matrix::zeros(1, w)).collect();
        Self {
            widths: widths.to_vec(),
            output,
            weights,
            biases,
        }
    }

    /// Builds a network from explicit layer matrices.
    pub fn from_layers(layers: Vec<(Matrix, Matrix)>, output: Activation) -> Result<Self, ShapeError> {
        let mut widths = Vec::with_capacity(layers.len() + 1);
        let (mut weights, mut biases) = (Vec::new(), Vec::new());
        for (w, b) in layers {
            if let Some(&prev) = widths.last() {
                if prev != w.rows() {
                    return Err(ShapeError::new("layer chain", prev, w.rows()));
                }
            } else {
                widths.push(w.rows());
            }
            if b.shape() != (1, w.cols()) {
                return Err(ShapeError::new("bias width", w.cols(), b.cols()));
            }
            widths.push(w.cols());
            weights.push(w);
            biases.push(b);
        }
        if weights.is_empty() {
            return Err(ShapeError::new("layer count", 1, 0));
        }
        Ok(Self {
            widths,
            output,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        2 * self.weights.len()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.biases[layer]
    }

    /// Puts the parameters on the tape, in [`params`](Self::params) order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    /// Forward pass for a batch of inputs (`rows × input_dim`).
    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<Var, ShapeError> {
        if params.len() != self.param_count() {
            return Err(ShapeError::new("mlp parameter count", self.param_count(), params.len()));
        }
        let (_, cols) = tape.shape(input);
        if cols != self.input_dim() {
            return Err(ShapeError::new("mlp input width", self.input_dim(), cols));
        }
        let mut h = input;
        let last = self.layer_count() - 1;
        for (l, pair) in params.chunks(2).enumerate() {
            let z = tape.matmul(h, pair[0]);
            let z = tape.add_row(z, pair[1]);
            h = if l < last || self.output == Activation::Tanh {
                tape.tanh(z)
            } else {
                z
            };
        }
        Ok(h)
    }

    /// Evaluates a single input vector without recording gradients.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>, ShapeError> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(Matrix::row_vector(input));
        let y = self.forward(&mut tape, &params, x)?;
        Ok(tape.value(y).as_slice().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_output() {
        let mlp = Mlp::zeros(&[3, 5, 2], Activation::Identity);
        assert_eq!(mlp.eval(&[0.3, -7.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mlp = Mlp::from_layers(
            vec![(Matrix::identity(2), Matrix::zeros(1, 2))],
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(mlp.eval(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn one_two_one_network_matches_hand_evaluation() {
        // h = tanh(x·[0.5, -1.0] + [0.1, 0.2]); y = h·[2.0, 3.0]ᵀ + (-0.4)
        let mlp = Mlp::from_layers(
            vec![
                (Matrix::row_vector(&[0.5, -1.0]), Matrix::row_vector(&[0.1, 0.2])),
                (Matrix::column_vector(&[2.0, 3.0]), Matrix::scalar(-0.4)),
            ],
            Activation::Identity,
        )
        .unwrap();
        let x: f64 = 0.7;
        let h1 = (0.5 * x + 0.1).tanh();
        let h2 = (-1.0 * x + 0.2).tanh();
        let expected = 2.0 * h1 + 3.0 * h2 - 0.4;
        let got = mlp.eval(&[x]).unwrap()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn wrong_input_width_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&[3, 4, 1], Activation::Identity, &mut rng);
        let err = mlp.eval(&[1.0, 2.0]).unwrap_err();
        assert_eq!(err.expected, 3);
        assert_eq!(err.got, 2);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::new(&[4, 16, 16, 3], Activation::Tanh, &mut rng);
        let x = [0.1, -0.2, 0.3, 0.9];
        let a = mlp.eval(&x).unwrap();
        let b = mlp.eval(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
