use super::{check_theta, normals, ModeSet, PriorBox, Simulator, SimulatorError};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::PI;

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

/// Midpoints `(2j + 1)/(2k)` of `k` equal cells of `[0, 1]`, crossed over
/// `dims` axes.
fn grid_centers(dims: usize, k: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..k).map(|j| (2 * j + 1) as f64 / (2 * k) as f64).collect();
    let mut out = vec![Vec::new()];
    for _ in 0..dims {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |a| {
                    let mut q = p.clone();
                    q.push(*a);
                    q
                })
            })
            .collect();
    }
    out
}

/// `x ~ N((cos 5πθ₁, cos 5πθ₂), 0.1·I)` on `θ ∈ [0, 1]²`. At `x_o = 0` the
/// posterior has 25 modes.
#[derive(Debug, Clone)]
pub struct CosineToy {
    prior: PriorBox,
}

impl CosineToy {
    pub const VARIANCE: f64 = 0.1;

    pub fn new() -> Self {
        Self {
            prior: PriorBox::cube(2, 0.0, 1.0),
        }
    }

    pub fn mean(theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|t| (5.0 * PI * t).cos()).collect()
    }
}

impl Default for CosineToy {
    fn default() -> Self {
        Self::new()
    }
}

impl Simulator for CosineToy {
    fn name(&self) -> &str {
        "cosine_toy"
    }

    fn prior(&self) -> &PriorBox {
        &self.prior
    }

    fn x_dim(&self) -> usize {
        2
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError> {
        check_theta(&self.prior, theta)?;
        let sd = Self::VARIANCE.sqrt();
        Ok(Self::mean(theta).iter().zip(normals(seed, 2)).map(|(m, e)| m + sd * e).collect())
    }

    fn log_likelihood(&self, x: &[f64], theta: &[f64]) -> Option<f64> {
        Some(Self::mean(theta).iter().zip(x).map(|(m, x)| ln_normal(*x, *m, Self::VARIANCE)).sum())
    }

    fn is_tractable(&self) -> bool {
        true
    }

    fn modes(&self) -> Option<ModeSet> {
        Some(ModeSet {
            centers: grid_centers(2, 5),
            capture_radius: 1.0 / 20.0,
        })
    }

    fn default_observation(&self) -> Option<Vec<f64>> {
        Some(vec![0.0, 0.0])
    }
}

/// `x ~ N(m(θ), σ²·I)` where `m(θ) = (cos kπθ₁, …, cos kπθ_d)` is tiled to
/// the output dimension. At `x_o = 0` the posterior has `k^d` modes.
#[derive(Debug, Clone)]
pub struct GridMultimodal {
    prior: PriorBox,
    modes_per_dim: usize,
    output_dim: usize,
    sigma: f64,
}

impl GridMultimodal {
    pub fn new(dims: usize, modes_per_dim: usize, output_dim: usize, sigma: f64) -> Result<Self, SimulatorError> {
        if dims == 0 || modes_per_dim == 0 {
            return Err(SimulatorError::Config("dims and modes must be positive".into()));
        }
        if output_dim == 0 || output_dim % dims != 0 {
            return Err(SimulatorError::Config(format!(
                "output dimension {output_dim} is not a positive multiple of {dims}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(SimulatorError::Config(format!("noise scale must be positive, got {sigma}")));
        }
        Ok(Self {
            prior: PriorBox::cube(dims, 0.0, 1.0),
            modes_per_dim,
            output_dim,
            sigma,
        })
    }

    pub fn mean(&self, theta: &[f64]) -> Vec<f64> {
        let k = self.modes_per_dim as f64;
        (0..self.output_dim).map(|i| (k * PI * theta[i % theta.len()]).cos()).collect()
    }
}

impl Simulator for GridMultimodal {
    fn name(&self) -> &str {
        "grid_multimodal"
    }

    fn prior(&self) -> &PriorBox {
        &self.prior
    }

    fn x_dim(&self) -> usize {
        self.output_dim
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError> {
        check_theta(&self.prior, theta)?;
        Ok(self
            .mean(theta)
            .iter()
            .zip(normals(seed, self.output_dim))
            .map(|(m, e)| m + self.sigma * e)
            .collect())
    }

    fn log_likelihood(&self, x: &[f64], theta: &[f64]) -> Option<f64> {
        let var = self.sigma * self.sigma;
        Some(self.mean(theta).iter().zip(x).map(|(m, x)| ln_normal(*x, *m, var)).sum())
    }

    fn is_tractable(&self) -> bool {
        true
    }

    fn modes(&self) -> Option<ModeSet> {
        Some(ModeSet {
            centers: grid_centers(self.prior.dim(), self.modes_per_dim),
            capture_radius: 1.0 / (4 * self.modes_per_dim) as f64,
        })
    }

    fn default_observation(&self) -> Option<Vec<f64>> {
        Some(vec![0.0; self.output_dim])
    }
}

/// `x ~ N(θ, I)` on `θ ∈ [−3, 3]^d`, whose posterior is a product of
/// truncated normals.
#[derive(Debug, Clone)]
pub struct TractableGaussian {
    prior: PriorBox,
}

impl TractableGaussian {
    pub const BOUND: f64 = 3.0;

    pub fn new(dims: usize) -> Result<Self, SimulatorError> {
        if dims == 0 {
            return Err(SimulatorError::Config("dims must be positive".into()));
        }
        Ok(Self {
            prior: PriorBox::cube(dims, -Self::BOUND, Self::BOUND),
        })
    }

    /// Normalized `ln p(θ | x)`.
    pub fn posterior_log_density(&self, theta: &[f64], x: &[f64]) -> f64 {
        if !self.prior.contains(theta) {
            return f64::NEG_INFINITY;
        }
        let n = Normal::standard();
        theta
            .iter()
            .zip(x)
            .map(|(t, x)| {
                let mass = n.cdf(Self::BOUND - x) - n.cdf(-Self::BOUND - x);
                ln_normal(*t, *x, 1.0) - mass.ln()
            })
            .sum()
    }

    /// Exact posterior draws by inverse-CDF sampling of each truncated
    /// coordinate.
    pub fn sample_posterior<R: Rng + ?Sized>(&self, x: &[f64], n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| x.iter().map(|x| x + truncated_standard_normal(-Self::BOUND - x, Self::BOUND - x, rng)).collect())
            .collect()
    }
}

/// `z ~ N(0, 1)` restricted to `[a, b]`. The interval is mirrored into the
/// lower tail so that the CDF values stay well away from 1.
fn truncated_standard_normal<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a > 0.0 {
        return -truncated_standard_normal(-b, -a, rng);
    }
    let n = Normal::standard();
    let (lo, hi) = (n.cdf(a), n.cdf(b));
    let u = lo + (hi - lo) * rng.random::<f64>();
    n.inverse_cdf(u).clamp(a, b)
}

impl Simulator for TractableGaussian {
    fn name(&self) -> &str {
        "tractable_gaussian"
    }

    fn prior(&self) -> &PriorBox {
        &self.prior
    }

    fn x_dim(&self) -> usize {
        self.prior.dim()
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError> {
        check_theta(&self.prior, theta)?;
        Ok(theta.iter().zip(normals(seed, theta.len())).map(|(t, e)| t + e).collect())
    }

    fn log_likelihood(&self, x: &[f64], theta: &[f64]) -> Option<f64> {
        Some(theta.iter().zip(x).map(|(t, x)| ln_normal(*x, *t, 1.0)).sum())
    }

    fn is_tractable(&self) -> bool {
        true
    }

    fn default_observation(&self) -> Option<Vec<f64>> {
        Some(vec![0.0; self.prior.dim()])
    }
}
