use super::{euclidean, median, MetricError};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance over both sets pooled.
    Median,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    /// Unbiased estimate; may be negative.
    pub mmd2: f64,
    pub mmd2_clipped: f64,
    pub bandwidth: f64,
    /// The median heuristic returned zero; the estimate is set to 0.
    pub degenerate: bool,
}

fn check(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<(), MetricError> {
    for s in [x, y] {
        if s.len() < 2 {
            return Err(MetricError::TooFewSamples { needed: 2, got: s.len() });
        }
    }
    let d = x[0].len();
    if let Some(p) = x.iter().chain(y).find(|p| p.len() != d) {
        return Err(MetricError::Dimension(p.len(), d));
    }
    Ok(())
}

fn median_distance(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut d = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(euclidean(pooled[i], pooled[j]));
        }
    }
    median(&d)
}

fn unbiased(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
        (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let within = |s: &[Vec<f64>]| {
        let mut t = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                t += k(&s[i], &s[j]);
            }
        }
        2.0 * t / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for a in x {
        for b in y {
            cross += k(a, b);
        }
    }
    within(x) + within(y) - 2.0 * cross / (x.len() * y.len()) as f64
}

/// Unbiased U-statistic estimate of squared MMD with kernel
/// `exp(−‖a − b‖²/(2σ²))`.
pub fn mmd(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: Bandwidth) -> Result<MmdEstimate, MetricError> {
    check(x, y)?;
    let sigma = match bandwidth {
        Bandwidth::Explicit(s) if s > 0.0 && s.is_finite() => s,
        Bandwidth::Explicit(s) => return Err(MetricError::Config(format!("bandwidth must be positive, got {s}"))),
        Bandwidth::Median => median_distance(x, y),
    };
    if sigma == 0.0 {
        return Ok(MmdEstimate {
            mmd2: 0.0,
            mmd2_clipped: 0.0,
            bandwidth: 0.0,
            degenerate: true,
        });
    }
    let m = unbiased(x, y, sigma);
    Ok(MmdEstimate {
        mmd2: m,
        mmd2_clipped: m.max(0.0),
        bandwidth: sigma,
        degenerate: false,
    })
}

/// Mean and standard deviation of the estimate under random relabelling of
/// the pooled samples, at a fixed bandwidth.
pub fn mmd_permutation_null<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    sigma: f64,
    permutations: usize,
    rng: &mut R,
) -> Result<(f64, f64), MetricError> {
    check(x, y)?;
    if permutations < 2 {
        return Err(MetricError::Config("need at least 2 permutations".into()));
    }
    let mut pooled: Vec<Vec<f64>> = x.iter().chain(y).cloned().collect();
    let stats: Vec<f64> = (0..permutations)
        .map(|_| {
            pooled.shuffle(rng);
            let (a, b) = pooled.split_at(x.len());
            unbiased(a, b, sigma)
        })
        .collect();
    let n = stats.len() as f64;
    let mean = stats.iter().sum::<f64>() / n;
    let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}
