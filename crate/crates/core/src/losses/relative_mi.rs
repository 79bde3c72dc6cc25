use crate::density::ConditionalDensity;
use crate::diffcore::Matrix;
use rand::{Rng, RngCore};

/// A conditional model `p(x | θ)` that can be both evaluated and sampled.
pub trait LikelihoodModel {
    /// `ln p(x | θⱼ)` for every row `θⱼ` of `thetas`.
    fn log_lik_many(&self, x: &[f64], thetas: &Matrix) -> Vec<f64>;
    /// One draw `x ~ p(· | θⱼ)` per row.
    fn sample_each(&self, thetas: &Matrix, rng: &mut dyn RngCore) -> Matrix;
}

impl LikelihoodModel for ConditionalDensity {
    fn log_lik_many(&self, x: &[f64], thetas: &Matrix) -> Vec<f64> {
        let n = thetas.rows();
        let events = Matrix::from_vec(n, x.len(), x.iter().copied().cycle().take(n * x.len()).collect());
        self.log_prob(&events, thetas)
            .expect("likelihood model dimensions are fixed at construction")
    }

    fn sample_each(&self, thetas: &Matrix, rng: &mut dyn RngCore) -> Matrix {
        ConditionalDensity::sample_each(self, thetas, rng).expect("likelihood model must be sampleable")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMi {
    /// `I_q / I_sim`; NaN when indeterminate.
    pub value: f64,
    pub std_error: f64,
    pub model: MiEstimate,
    pub reference: MiEstimate,
    /// The reference mutual information estimate was not positive.
    pub indeterminate: bool,
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-outer-sample nested estimates
/// `ln p(xᵢ | θᵢ) − ln (1/L) Σⱼ p(xᵢ | θ'ⱼ)`, `xᵢ ~ p(· | θᵢ)`.
fn mi_terms(model: &dyn LikelihoodModel, outer: &Matrix, inner: &Matrix, rng: &mut dyn RngCore) -> Vec<f64> {
    let x = model.sample_each(outer, rng);
    let ln_l = (inner.rows() as f64).ln();
    (0..outer.rows())
        .map(|i| {
            let own = model.log_lik_many(x.row(i), &outer.select_rows(&[i]))[0];
            let marg = crate::diffcore::logsumexp(&model.log_lik_many(x.row(i), inner)) - ln_l;
            own - marg
        })
        .collect()
}

/// Nested Monte-Carlo mutual information `I(θ; x)` under `θ ~ pool`.
pub fn mutual_information(
    model: &dyn LikelihoodModel,
    theta_pool: &Matrix,
    outer: usize,
    inner: usize,
    rng: &mut dyn RngCore,
) -> MiEstimate {
    let o = draw_rows(theta_pool, outer, rng);
    let i = draw_rows(theta_pool, inner, rng);
    let (value, std_error) = mean_and_se(&mi_terms(model, &o, &i, rng));
    MiEstimate { value, std_error }
}

fn draw_rows(pool: &Matrix, n: usize, rng: &mut dyn RngCore) -> Matrix {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..pool.rows())).collect();
    pool.select_rows(&idx)
}

/// `I_rel = I_model(θ; x) / I_reference(θ; x)` with θ drawn uniformly from
/// `theta_pool`. Both terms share the outer and inner θ draws; the standard
/// error is the delta-method error of the ratio.
pub fn relative_mi(
    model: &dyn LikelihoodModel,
    reference: &dyn LikelihoodModel,
    theta_pool: &Matrix,
    outer: usize,
    inner: usize,
    rng: &mut dyn RngCore,
) -> RelativeMi {
    assert!(theta_pool.rows() > 0 && outer > 0 && inner > 0);
    let o = draw_rows(theta_pool, outer, rng);
    let i = draw_rows(theta_pool, inner, rng);
    let num = mi_terms(model, &o, &i, rng);
    let den = mi_terms(reference, &o, &i, rng);
    let (nm, nse) = mean_and_se(&num);
    let (dm, dse) = mean_and_se(&den);
    let model_mi = MiEstimate {
        value: nm,
        std_error: nse,
    };
    let reference_mi = MiEstimate {
        value: dm,
        std_error: dse,
    };
    // exact-zero mutual information comes out at rounding level
    if !(dm > 1e-12) {
        return RelativeMi {
            value: f64::NAN,
            std_error: f64::NAN,
            model: model_mi,
            reference: reference_mi,
            indeterminate: true,
        };
    }
    let ratio = nm / dm;
    let z: Vec<f64> = num.iter().zip(&den).map(|(n, d)| n - ratio * d).collect();
    let (_, zse) = mean_and_se(&z);
    RelativeMi {
        value: ratio,
        std_error: zse / dm,
        model: model_mi,
        reference: reference_mi,
        indeterminate: false,
    }
}
