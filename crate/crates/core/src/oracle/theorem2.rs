use super::{DiscreteJoint, OracleError};
use rand::Rng;
use serde::{Deserialize, Serialize};

const BISECTION_TOLERANCE: f64 = 1e-12;
const MAX_DOUBLINGS: usize = 60;

/// `a(θ, x) = ln(q_φ(θ|x) / Z_φ(x))` as `[θ][x]`, the reward the penalty
/// pays a likelihood model for mass at `x`.
pub fn posterior_scores(joint: &DiscreteJoint) -> Result<Vec<Vec<f64>>, OracleError> {
    let z = joint.normalizer(&joint.q_phi)?;
    Ok((0..joint.thetas())
        .map(|t| (0..joint.xs()).map(|x| (joint.q_phi[x][t] / z[x]).ln()).collect())
        .collect())
}

/// Per-θ objective of the regularized loss, `−Σ_x p_x ln q_x − λ Σ_x a_x q_x`.
/// Infinite outside the domain where every `p_x > 0` cell has `q_x > 0`.
pub fn row_objective(p: &[f64], a: &[f64], lambda: f64, q: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((&p, &a), &q) in p.iter().zip(a).zip(q) {
        if p > 0.0 {
            if q <= 0.0 {
                return f64::INFINITY;
            }
            s -= p * q.ln();
        }
        if q != 0.0 {
            s -= lambda * a * q;
        }
    }
    s
}

/// Normalizing constant `c` with `Σ_x p_x / (c − λ a_x) = 1`, or `None`
/// when no root exists in the bracket.
pub fn normalizing_constant(p: &[f64], a: &[f64], lambda: f64) -> Option<f64> {
    let lo0 = p
        .iter()
        .zip(a)
        .filter(|(p, _)| **p > 0.0)
        .map(|(_, a)| lambda * a)
        .fold(f64::NEG_INFINITY, f64::max);
    // mass on cells the simulator never reaches would need a denominator at
    // or below zero there
    if p.iter().zip(a).any(|(p, a)| *p == 0.0 && lambda * a > lo0) || !lo0.is_finite() {
        return None;
    }
    let excess = |c: f64| {
        p.iter()
            .zip(a)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, a)| p / (c - lambda * a))
            .sum::<f64>()
            - 1.0
    };
    let mut lo = lo0;
    let mut width = 1.0;
    let mut hi = lo0 + width;
    let mut doublings = 0;
    while excess(hi) > 0.0 {
        lo = hi;
        width *= 2.0;
        hi = lo0 + width;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return None;
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let e = excess(mid);
        if e.abs() < BISECTION_TOLERANCE {
            return Some(mid);
        }
        if e > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    (c > lo0 && excess(c).abs() < 1e-10).then_some(c)
}

/// `q*(x) = p_x / (c − λ a_x)`.
pub fn closed_form_row(p: &[f64], a: &[f64], lambda: f64) -> Option<(f64, Vec<f64>)> {
    let c = normalizing_constant(p, a, lambda)?;
    let q = p
        .iter()
        .zip(a)
        .map(|(&p, &a)| if p > 0.0 { p / (c - lambda * a) } else { 0.0 })
        .collect();
    Some((c, q))
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentOutcome {
    pub q: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected gradient descent with backtracking from `init`.
pub fn projected_gradient_row(p: &[f64], a: &[f64], lambda: f64, init: &[f64], max_iterations: usize) -> DescentOutcome {
    let mut q = project_to_simplex(init);
    // start strictly inside the domain
    if !row_objective(p, a, lambda, &q).is_finite() {
        let n = q.len() as f64;
        q = q.iter().map(|v| 0.5 * v + 0.5 / n).collect();
    }
    let mut f = row_objective(p, a, lambda, &q);
    let mut eta: f64 = 1.0;
    for it in 0..max_iterations {
        let g: Vec<f64> = p
            .iter()
            .zip(a)
            .zip(&q)
            .map(|((&p, &a), &q)| if p > 0.0 { -p / q } else { 0.0 } - lambda * a)
            .collect();
        eta = (eta * 2.0).min(1e6);
        let (next, fnext) = loop {
            let cand = project_to_simplex(&q.iter().zip(&g).map(|(q, g)| q - eta * g).collect::<Vec<_>>());
            let fc = row_objective(p, a, lambda, &cand);
            let lin: f64 = g.iter().zip(cand.iter().zip(&q)).map(|(g, (c, q))| g * (c - q)).sum();
            let sq: f64 = cand.iter().zip(&q).map(|(c, q)| (c - q).powi(2)).sum();
            if fc <= f + lin + sq / (2.0 * eta) {
                break (cand, fc);
            }
            eta *= 0.5;
            if eta < 1e-300 {
                break (q.clone(), f);
            }
        };
        let step = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        f = fnext;
        if step < 1e-15 {
            return DescentOutcome {
                q,
                iterations: it + 1,
                converged: true,
            };
        }
    }
    DescentOutcome {
        q,
        iterations: max_iterations,
        converged: false,
    }
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Row {
    /// `None` when no normalizing constant was found.
    pub c: Option<f64>,
    pub closed_form: Option<Vec<f64>>,
    pub brute_force: Vec<f64>,
    pub brute_force_converged: bool,
    pub tv_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Outcome {
    pub lambda: f64,
    pub rows: Vec<Theorem2Row>,
}

impl Theorem2Outcome {
    pub fn feasible(&self) -> bool {
        self.rows.iter().all(|r| r.c.is_some())
    }

    /// Largest total-variation gap over feasible rows.
    pub fn max_gap(&self) -> f64 {
        self.rows.iter().filter_map(|r| r.tv_gap).fold(0.0, f64::max)
    }
}

pub const BRUTE_FORCE_ITERATIONS: usize = 200_000;

/// Closed-form and brute-force minimizers of the regularized loss for
/// every θ of `joint`, with `q_φ` taken from the joint.
pub fn verify_theorem2(joint: &DiscreteJoint, lambda: f64) -> Result<Theorem2Outcome, OracleError> {
    joint.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(OracleError::Domain(format!("λ must be positive, got {lambda}")));
    }
    let scores = posterior_scores(joint)?;
    let nx = joint.xs();
    let uniform = vec![1.0 / nx as f64; nx];
    let rows = (0..joint.thetas())
        .map(|t| {
            let p = &joint.p_sim[t];
            let a = &scores[t];
            let closed = closed_form_row(p, a, lambda);
            let brute = projected_gradient_row(p, a, lambda, &uniform, BRUTE_FORCE_ITERATIONS);
            let tv_gap = closed.as_ref().map(|(_, q)| total_variation(q, &brute.q));
            Theorem2Row {
                c: closed.as_ref().map(|(c, _)| *c),
                closed_form: closed.map(|(_, q)| q),
                brute_force: brute.q,
                brute_force_converged: brute.converged,
                tv_gap,
            }
        })
        .collect();
    Ok(Theorem2Outcome { lambda, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub joints: usize,
    pub lambdas: Vec<f64>,
    pub max_gap: f64,
    /// `(joint, λ, θ)` triples without a normalizing constant.
    pub infeasible: Vec<(usize, f64, usize)>,
    pub tolerance: f64,
}

impl Theorem2Report {
    pub fn passed(&self) -> bool {
        self.max_gap < self.tolerance
    }
}

pub fn theorem2_report<R: Rng + ?Sized>(
    joints: usize,
    max_states: usize,
    lambdas: &[f64],
    rng: &mut R,
) -> Result<Theorem2Report, OracleError> {
    let mut max_gap: f64 = 0.0;
    let mut infeasible = Vec::new();
    for j in 0..joints {
        let joint = DiscreteJoint::random(rng.random_range(1..=max_states), rng.random_range(2..=max_states), rng);
        for &l in lambdas {
            let out = verify_theorem2(&joint, l)?;
            max_gap = max_gap.max(out.max_gap());
            for (t, r) in out.rows.iter().enumerate() {
                if r.c.is_none() {
                    infeasible.push((j, l, t));
                }
            }
        }
    }
    Ok(Theorem2Report {
        joints,
        lambdas: lambdas.to_vec(),
        max_gap,
        infeasible,
        tolerance: 1e-4,
    })
}

/// Gradient of the population regularized loss
/// `Σ_θ p̃_r(θ)[−Σ_x p_sim ln q_ψ − λ Σ_x a q_ψ]` with respect to softmax
/// logits of `q_ψ`, evaluated at the joint's `q_psi`.
pub fn regularized_logit_gradient(joint: &DiscreteJoint, lambda: f64) -> Result<Vec<Vec<f64>>, OracleError> {
    let scores = posterior_scores(joint)?;
    Ok((0..joint.thetas())
        .map(|t| {
            let (p, q, a) = (&joint.p_sim[t], &joint.q_psi[t], &scores[t]);
            let mean_a: f64 = q.iter().zip(a).map(|(q, a)| q * a).sum();
            (0..joint.xs())
                .map(|x| joint.proposal[t] * ((q[x] - p[x]) - lambda * q[x] * (a[x] - mean_a)))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::check_gradient;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_to_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let q = project_to_simplex(&[0.5, 0.5, 0.5]);
        assert!(q.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn vanishing_lambda_returns_the_simulator() {
        let j = DiscreteJoint::random(3, 5, &mut stream(&[21]));
        let out = verify_theorem2(&j, 1e-8).unwrap();
        for (r, p) in out.rows.iter().zip(&j.p_sim) {
            assert!((r.c.unwrap() - 1.0).abs() < 1e-6);
            let q = r.closed_form.as_ref().unwrap();
            assert!(total_variation(q, p) < 1e-6);
        }
    }

    #[test]
    fn three_by_five_at_half() {
        let j = DiscreteJoint::random(3, 5, &mut stream(&[22]));
        let out = verify_theorem2(&j, 0.5).unwrap();
        assert!(out.feasible());
        assert!(out.rows.iter().all(|r| r.brute_force_converged));
        assert!(out.max_gap() < 1e-4, "{}", out.max_gap());
    }

    #[test]
    fn flat_posterior_leaves_the_simulator_unchanged() {
        let mut j = DiscreteJoint::random(4, 3, &mut stream(&[23]));
        // q_φ(θ|x) ∝ p(θ)/p̃_r(θ)·const makes ln(q_φ/Z_φ) constant in x
        let w: Vec<f64> = j.prior.iter().zip(&j.proposal).map(|(p, r)| p / r).collect();
        let s: f64 = w.iter().sum();
        j.q_phi = vec![w.iter().map(|v| v / s).collect(); 3];
        let out = verify_theorem2(&j, 0.7).unwrap();
        for (r, p) in out.rows.iter().zip(&j.p_sim) {
            assert!(total_variation(r.closed_form.as_ref().unwrap(), p) < 1e-10);
        }
    }

    #[test]
    fn closed_form_satisfies_stationarity() {
        let j = DiscreteJoint::random(4, 6, &mut stream(&[24]));
        let a = posterior_scores(&j).unwrap();
        for t in 0..4 {
            let (c, q) = closed_form_row(&j.p_sim[t], &a[t], 0.3).unwrap();
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            // −p/q − λa + c = 0 on every cell
            for x in 0..6 {
                assert!((-j.p_sim[t][x] / q[x] - 0.3 * a[t][x] + c).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unreachable_cell_with_top_score_is_infeasible() {
        let p = [0.5, 0.5, 0.0];
        let a = [0.0, -1.0, 2.0];
        assert!(normalizing_constant(&p, &a, 1.0).is_none());
        // with a low score on the unreachable cell the root exists
        assert!(normalizing_constant(&p, &[0.0, -1.0, -2.0], 1.0).is_some());
    }

    #[test]
    fn twenty_five_joints_three_lambdas() {
        let r = theorem2_report(25, 8, &[0.1, 0.5, 1.0], &mut stream(&[25])).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn minimizer_is_unique_across_restarts() {
        let j = DiscreteJoint::random(3, 6, &mut stream(&[26]));
        let a = posterior_scores(&j).unwrap();
        let mut rng = stream(&[27]);
        for t in 0..3 {
            let base = projected_gradient_row(&j.p_sim[t], &a[t], 0.5, &[1.0 / 6.0; 6], BRUTE_FORCE_ITERATIONS);
            for _ in 0..5 {
                let init: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
                let other = projected_gradient_row(&j.p_sim[t], &a[t], 0.5, &init, BRUTE_FORCE_ITERATIONS);
                assert!(total_variation(&base.q, &other.q) < 1e-6);
            }
        }
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let j = DiscreteJoint::random(3, 4, &mut stream(&[28]));
        let lambda = 0.4;
        let a = posterior_scores(&j).unwrap();
        let logits: Vec<f64> = j.q_psi.iter().flatten().map(|q| q.ln()).collect();
        let loss = |l: &[f64]| {
            (0..3)
                .map(|t| {
                    let row = &l[4 * t..4 * t + 4];
                    let m = crate::diffcore::logsumexp(row);
                    let q: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                    j.proposal[t] * row_objective(&j.p_sim[t], &a[t], lambda, &q)
                })
                .sum::<f64>()
        };
        let g: Vec<f64> = regularized_logit_gradient(&j, lambda).unwrap().concat();
        let r = check_gradient(loss, &g, &logits, 1e-6).unwrap();
        assert!(r.passes(1e-5), "{r:?}");
    }

    #[test]
    fn truth_is_stationary_as_lambda_vanishes() {
        let mut j = DiscreteJoint::random(5, 5, &mut stream(&[29]));
        j.q_psi = j.p_sim.clone();
        let g = regularized_logit_gradient(&j, 1e-9).unwrap();
        let norm = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
        let g = regularized_logit_gradient(&j, 0.5).unwrap();
        assert!(g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt() > 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn closed_form_beats_perturbations(seed in any::<u64>(), lambda in 0.01f64..2.0) {
            let mut rng = stream(&[seed]);
            let j = DiscreteJoint::random(2, 4, &mut rng);
            let a = posterior_scores(&j).unwrap();
            let (_, q) = closed_form_row(&j.p_sim[0], &a[0], lambda).unwrap();
            let best = row_objective(&j.p_sim[0], &a[0], lambda, &q);
            let noise: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 1e-3).collect();
            let other = project_to_simplex(&q.iter().zip(&noise).map(|(a, b)| a + b).collect::<Vec<_>>());
            prop_assert!(row_objective(&j.p_sim[0], &a[0], lambda, &other) >= best - 1e-12);
        }
    }
}
