use super::MetricError;
use crate::simulators::Simulator;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcReport {
    pub trials: usize,
    pub failed: usize,
    pub draws: usize,
    /// Per coordinate, counts of the rank `#{posterior draws < θ*}` in
    /// `0..=draws`.
    pub rank_counts: Vec<Vec<usize>>,
    /// Per coordinate, the binned histogram the χ² test uses.
    pub histograms: Vec<Vec<usize>>,
    pub p_values: Vec<f64>,
}

impl SbcReport {
    pub fn min_p_value(&self) -> f64 {
        self.p_values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Bin count for `trials` rank statistics over `draws + 1` rank values:
/// about ten expected counts per bin, at most 20 bins.
pub fn sbc_bins(trials: usize, draws: usize) -> usize {
    (trials / 10).clamp(2, 20).min(draws + 1)
}

/// Simulation-based calibration. Each trial draws `θ*` from the prior and
/// `x*` from the simulator, then asks `infer` for `draws` posterior samples
/// given `x*`.
pub fn sbc<E>(
    simulator: &dyn Simulator,
    trials: usize,
    draws: usize,
    infer: &mut dyn FnMut(&[f64], usize, &mut dyn RngCore) -> Result<Vec<Vec<f64>>, E>,
    rng: &mut dyn RngCore,
) -> Result<SbcReport, MetricError> {
    if trials < 50 || draws < 10 {
        return Err(MetricError::Config(format!(
            "need at least 50 trials and 10 draws, got {trials} and {draws}"
        )));
    }
    let d = simulator.theta_dim();
    let mut rank_counts = vec![vec![0usize; draws + 1]; d];
    let mut failed = 0;
    for _ in 0..trials {
        let theta = simulator.prior().sample(rng);
        let Ok(x) = simulator.simulate(&theta, rng.random()) else {
            failed += 1;
            continue;
        };
        match infer(&x, draws, rng) {
            Ok(samples) if samples.len() == draws && samples.iter().all(|s| s.len() == d) => {
                for k in 0..d {
                    let rank = samples.iter().filter(|s| s[k] < theta[k]).count();
                    rank_counts[k][rank] += 1;
                }
            }
            _ => failed += 1,
        }
    }
    if failed * 5 > trials {
        return Err(MetricError::TooManyFailures { failed, trials });
    }
    let done = trials - failed;
    let bins = sbc_bins(done, draws);
    let mut histograms = Vec::with_capacity(d);
    let mut p_values = Vec::with_capacity(d);
    for counts in &rank_counts {
        let mut hist = vec![0usize; bins];
        let mut width = vec![0usize; bins];
        for (rank, c) in counts.iter().enumerate() {
            let b = rank * bins / (draws + 1);
            hist[b] += c;
            width[b] += 1;
        }
        let chi2: f64 = hist
            .iter()
            .zip(&width)
            .map(|(&o, &w)| {
                let e = done as f64 * w as f64 / (draws + 1) as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let dist = ChiSquared::new((bins - 1) as f64).expect("positive degrees of freedom");
        p_values.push(dist.sf(chi2));
        histograms.push(hist);
    }
    Ok(SbcReport {
        trials,
        failed,
        draws,
        rank_counts,
        histograms,
        p_values,
    })
}
