use super::{Matrix, Tape, TapeError, Var};
use thiserror::Error;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `max_i |analyticᵢ − numericᵢ| / (|numericᵢ| + 1e-12)`.
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradCheckError {
    #[error("function is not finite when coordinate {coordinate:?} is perturbed (value {value})")]
    NonFinite { coordinate: Option<usize>, value: f64 },
    #[error("analytic gradient has length {got}, expected {expected}")]
    GradientLength { expected: usize, got: usize },
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Checks a tape-built scalar function of a flat parameter vector.
///
/// `f` receives a fresh tape and a `1 × n` parameter leaf and must return a
/// scalar node.
pub fn grad_check<F>(f: F, point: &[f64], step: f64) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let p = tape.param(Matrix::row_vector(point));
    let y = f(&mut tape, p);
    let value = tape.scalar(y);
    if !value.is_finite() {
        return Err(GradCheckError::NonFinite {
            coordinate: None,
            value,
        });
    }
    let grads = tape.backward(y)?;
    let analytic = grads.get_or_zeros(p, 1, point.len()).into_vec();

    let eval = |x: &[f64]| {
        let mut tape = Tape::new();
        let p = tape.constant(Matrix::row_vector(x));
        let y = f(&mut tape, p);
        tape.scalar(y)
    };
    compare(eval, &analytic, point, step)
}

/// Same check with a caller-supplied analytic gradient.
pub fn check_gradient<F>(
    f: F,
    analytic: &[f64],
    point: &[f64],
    step: f64,
) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic.len() != point.len() {
        return Err(GradCheckError::GradientLength {
            expected: point.len(),
            got: analytic.len(),
        });
    }
    compare(f, analytic, point, step)
}

fn compare<F>(f: F, analytic: &[f64], point: &[f64], step: f64) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let hi = f(&probe);
        probe[i] = point[i] - step;
        let lo = f(&probe);
        probe[i] = point[i];
        for v in [hi, lo] {
            if !v.is_finite() {
                return Err(GradCheckError::NonFinite {
                    coordinate: Some(i),
                    value: v,
                });
            }
        }
        numeric.push((hi - lo) / (2.0 * step));
    }
    let (mut worst, mut worst_i) = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / (n.abs() + 1e-12);
        if err > worst || err.is_nan() {
            worst = err;
            worst_i = i;
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        worst_coordinate: worst_i,
        analytic: analytic.to_vec(),
        numeric,
    })
}

/// Splits a `1 × n` flat parameter node into matrices of the given shapes.
pub fn unflatten_on_tape(tape: &mut Tape, flat: Var, shapes: &[(usize, usize)]) -> Vec<Var> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|&(r, c)| {
            let s = tape.slice_cols(flat, offset, offset + r * c);
            offset += r * c;
            tape.reshape(s, r, c)
        })
        .collect()
}

/// Concatenates matrices into one flat buffer, row-major.
pub fn flatten(params: &[&Matrix]) -> Vec<f64> {
    params.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}
