use super::*;
use crate::rng::stream;
use crate::simulators::{GridMultimodal, PriorBox, Simulator, TractableGaussian};
use proptest::prelude::*;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

fn gaussian_cloud(n: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

#[test]
fn mmd_of_identical_sets_is_zero_after_clipping() {
    let x = gaussian_cloud(50, 2, &mut stream(&[41]));
    let m = mmd(&x, &x, Bandwidth::Median).unwrap();
    assert_eq!(m.mmd2_clipped, 0.0);
    assert!(m.mmd2 <= 0.0);
}

#[test]
fn mmd_of_two_point_masses_has_closed_form() {
    for (delta, sigma) in [(0.5, 1.0), (2.0, 0.7), (3.0, 3.0)] {
        let x = vec![vec![1.0, -2.0]; 7];
        let y = vec![vec![1.0 + delta, -2.0]; 5];
        let m = mmd(&x, &y, Bandwidth::Explicit(sigma)).unwrap();
        let exact = 2.0 * (1.0 - (-delta * delta / (2.0 * sigma * sigma)).exp());
        assert!((m.mmd2 - exact).abs() < 1e-12, "{} vs {exact}", m.mmd2);
    }
}

#[test]
fn mmd_of_same_distribution_sits_in_the_permutation_null() {
    let mut rng = stream(&[42]);
    let x = gaussian_cloud(1000, 2, &mut rng);
    let y = gaussian_cloud(1000, 2, &mut rng);
    let m = mmd(&x, &y, Bandwidth::Median).unwrap();
    let (_, sd) = mmd_permutation_null(&x, &y, m.bandwidth, 20, &mut rng).unwrap();
    assert!(m.mmd2.abs() < 3.0 * sd, "{} vs {sd}", m.mmd2);
}

#[test]
fn mmd_degenerate_and_invalid_inputs() {
    let x = vec![vec![0.0]; 4];
    let m = mmd(&x, &x, Bandwidth::Median).unwrap();
    assert!(m.degenerate);
    assert_eq!(m.mmd2, 0.0);
    assert!(mmd(&x[..1], &x, Bandwidth::Median).is_err());
    assert!(mmd(&x, &[vec![0.0, 1.0], vec![1.0, 0.0]], Bandwidth::Median).is_err());
    assert!(mmd(&x, &x, Bandwidth::Explicit(0.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn mmd_symmetric_and_permutation_invariant(seed in any::<u64>(), sigma in 0.1f64..5.0) {
        let mut rng = stream(&[seed]);
        let x = gaussian_cloud(12, 2, &mut rng);
        let mut y = gaussian_cloud(9, 2, &mut rng);
        y.iter_mut().for_each(|p| p[0] += 0.5);
        let a = mmd(&x, &y, Bandwidth::Explicit(sigma)).unwrap().mmd2;
        let b = mmd(&y, &x, Bandwidth::Explicit(sigma)).unwrap().mmd2;
        let mut xr = x.clone();
        xr.reverse();
        let c = mmd(&xr, &y, Bandwidth::Explicit(sigma)).unwrap().mmd2;
        prop_assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
    }

    #[test]
    fn diversity_score_is_bounded(counts in proptest::collection::vec(0usize..5, 16)) {
        let g = GridMultimodal::new(2, 4, 2, 0.3).unwrap();
        let modes = g.modes().unwrap();
        let samples: Vec<Vec<f64>> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat(modes.centers[i].clone()).take(c))
            .collect();
        let r = mode_diversity(&samples, &modes).unwrap();
        prop_assert!(r.score <= 16.0 + 1e-12);
        let covered: Vec<usize> = counts.iter().copied().filter(|c| *c > 0).collect();
        if !covered.is_empty() && covered.iter().all(|c| *c == covered[0]) {
            prop_assert!((r.score - r.covered as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn nltp_uniform_is_zero() {
    let b = PriorBox::cube(2, 0.0, 1.0);
    let mut rng = stream(&[43]);
    let flat = |_: &[f64]| 0.0;
    for method in [Normalization::Normalized, Normalization::Auto] {
        let e = nltp(&flat, &b, &[0.3, 0.9], method, &mut rng).unwrap();
        assert!(e.value.abs() < 1e-12, "{method:?}: {}", e.value);
    }
}

#[test]
fn nltp_truncated_normal() {
    let b = PriorBox::cube(1, -5.0, 5.0);
    let unnormalized = |t: &[f64]| -0.5 * t[0] * t[0] + 3.0;
    let e = nltp(&unnormalized, &b, &[0.0], Normalization::Auto, &mut stream(&[44])).unwrap();
    // truncation at ±5 removes 5.7e-7 of the mass
    let exact = 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0f64 - 5.733e-7).ln();
    assert!((e.value - exact).abs() < 1e-6, "{}", e.value);
    assert!((e.value - 0.91894).abs() < 1e-5);
}

#[test]
fn nltp_grid_and_importance_sampling_agree() {
    let b = PriorBox::cube(2, -3.0, 3.0);
    let g = TractableGaussian::new(2).unwrap();
    let x = [0.7, -1.2];
    let post = |t: &[f64]| g.posterior_log_density(t, &x) + 2.0;
    let truth = [0.5, -1.0];
    let mut rng = stream(&[45]);
    let grid = nltp(&post, &b, &truth, Normalization::Grid { points_per_dim: 400 }, &mut rng).unwrap();
    let is = nltp(
        &post,
        &b,
        &truth,
        Normalization::ImportanceSampling {
            draws: DEFAULT_IMPORTANCE_DRAWS,
        },
        &mut rng,
    )
    .unwrap();
    assert!((grid.value - is.value).abs() < 3.0 * is.std_error, "{grid:?} {is:?}");
    let exact = -g.posterior_log_density(&truth, &x);
    assert!((grid.value - exact).abs() < 1e-4);
}

#[test]
fn nltp_zero_normalizer_is_infinite() {
    let b = PriorBox::cube(1, 0.0, 1.0);
    let none = |_: &[f64]| f64::NEG_INFINITY;
    let e = nltp(&none, &b, &[0.5], Normalization::ImportanceSampling { draws: 10 }, &mut stream(&[46])).unwrap();
    assert_eq!(e.value, f64::INFINITY);
    assert!(nltp(&none, &b, &[1.5], Normalization::Auto, &mut stream(&[46])).is_err());
}

#[test]
fn meddist_conventions() {
    let o = [0.0, 0.0];
    assert_eq!(meddist(&vec![vec![0.0, 0.0]; 3], &o).unwrap(), 0.0);
    let odd = [vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 0.0]];
    assert_eq!(meddist(&odd, &o).unwrap(), 2.0);
    let even = [vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 0.0], vec![0.0, -10.0]];
    assert_eq!(meddist(&even, &o).unwrap(), 2.5);
    assert!(meddist(&[], &o).is_err());
}

#[test]
fn diversity_examples() {
    let g = GridMultimodal::new(2, 4, 2, 0.3).unwrap();
    let modes = g.modes().unwrap();
    let one = vec![modes.centers[3].clone(); 10];
    let r = mode_diversity(&one, &modes).unwrap();
    assert_eq!((r.covered, r.score), (1, 1.0));
    let eight: Vec<Vec<f64>> = (0..8).flat_map(|i| vec![modes.centers[2 * i].clone(); 5]).collect();
    let r = mode_diversity(&eight, &modes).unwrap();
    assert_eq!(r.covered, 8);
    assert!((r.score - 8.0).abs() < 1e-12);
    let cos = crate::simulators::CosineToy::new().modes().unwrap();
    let all: Vec<Vec<f64>> = cos.centers.iter().flat_map(|c| vec![c.clone(); 4]).collect();
    let r = mode_diversity(&all, &cos).unwrap();
    assert_eq!(r.covered, 25);
    assert!((r.score - 25.0).abs() < 1e-12);
    let off = mode_diversity(&[vec![0.0, 0.0]], &modes).unwrap();
    assert_eq!((off.covered, off.off_mode, off.score), (0, 1, 0.0));
    let empty = crate::simulators::ModeSet {
        centers: vec![],
        capture_radius: 0.1,
    };
    assert!(mode_diversity(&one, &empty).is_err());
}

#[test]
fn sbc_discriminates() {
    let g = TractableGaussian::new(1).unwrap();
    let mut exact = |x: &[f64], l: usize, rng: &mut dyn RngCore| Ok::<_, ()>(g.sample_posterior(x, l, rng));
    let r = sbc(&g, 200, 100, &mut exact, &mut stream(&[47])).unwrap();
    assert!(r.min_p_value() > 0.01, "{r:?}");
    assert_eq!(r.histograms[0].iter().sum::<usize>(), 200);

    let center = g.prior().center();
    let mut point = |_: &[f64], l: usize, _: &mut dyn RngCore| Ok::<_, ()>(vec![center.clone(); l]);
    let r = sbc(&g, 200, 100, &mut point, &mut stream(&[48])).unwrap();
    assert!(r.min_p_value() < 1e-6);
    let extremes = r.rank_counts[0][0] + r.rank_counts[0][100];
    assert_eq!(extremes, 200);

    // ignoring the data still calibrates
    let prior = g.prior().clone();
    let mut from_prior =
        |_: &[f64], l: usize, rng: &mut dyn RngCore| Ok::<_, ()>((0..l).map(|_| prior.sample(rng)).collect());
    let r = sbc(&g, 200, 100, &mut from_prior, &mut stream(&[49])).unwrap();
    assert!(r.min_p_value() > 1e-3, "{r:?}");
}

#[test]
fn sbc_failures() {
    let g = TractableGaussian::new(1).unwrap();
    let mut n = 0;
    let mut flaky = |x: &[f64], l: usize, rng: &mut dyn RngCore| {
        n += 1;
        if n % 3 == 0 {
            Err(())
        } else {
            Ok(g.sample_posterior(x, l, rng))
        }
    };
    assert!(matches!(
        sbc(&g, 60, 10, &mut flaky, &mut stream(&[50])),
        Err(MetricError::TooManyFailures { .. })
    ));
    let mut fine = |x: &[f64], l: usize, rng: &mut dyn RngCore| Ok::<_, ()>(g.sample_posterior(x, l, rng));
    assert!(sbc(&g, 20, 10, &mut fine, &mut stream(&[50])).is_err());
    assert_eq!(sbc_bins(200, 100), 20);
    assert_eq!(sbc_bins(50, 100), 5);
}
