use super::OracleError;
use serde::{Deserialize, Serialize};

/// Closed-form losses of the two-parameter Gaussian chain model
/// `q = N(x₁; 0, θ₁²) N(x₂; x₁, θ₂²)` against `p = N(x₁; 0, 1) N(x₂; x₁, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyLosses {
    pub snl: f64,
    pub f1: f64,
    pub f2: f64,
}

fn check(t1: f64, t2: f64) -> Result<(), OracleError> {
    if t1 > 0.0 && t2 > 0.0 && t1.is_finite() && t2.is_finite() {
        Ok(())
    } else {
        Err(OracleError::Domain(format!("toy parameters must be positive, got ({t1}, {t2})")))
    }
}

/// `L_SNL = ln θ₁ + ln θ₂ + (θ₁² + θ₂²)/(2θ₁²θ₂²)`,
/// `F₁ = −ln θ₁ − ln θ₂ + (θ₁² + θ₂²)/2 − 1`,
/// `F₂ = ½ ln(θ₁² + θ₂²) − ln θ₂`.
pub fn toy_losses(t1: f64, t2: f64) -> Result<ToyLosses, OracleError> {
    check(t1, t2)?;
    let (s1, s2) = (t1 * t1, t2 * t2);
    Ok(ToyLosses {
        snl: t1.ln() + t2.ln() + (s1 + s2) / (2.0 * s1 * s2),
        f1: -t1.ln() - t2.ln() + (s1 + s2) / 2.0 - 1.0,
        f2: 0.5 * (s1 + s2).ln() - t2.ln(),
    })
}

/// Gradients `(∇L_SNL, ∇F₁, ∇F₂)`.
pub fn toy_gradients(t1: f64, t2: f64) -> Result<[[f64; 2]; 3], OracleError> {
    check(t1, t2)?;
    let s = t1 * t1 + t2 * t2;
    Ok([
        [1.0 / t1 - 1.0 / t1.powi(3), 1.0 / t2 - 1.0 / t2.powi(3)],
        [t1 - 1.0 / t1, t2 - 1.0 / t2],
        [t1 / s, t2 / s - 1.0 / t2],
    ])
}

/// Loss combinations for gradient descent on the toy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToyObjective {
    Snl,
    SnlPlusF1,
    SnlPlusF2,
    /// `L_SNL + λ_t (F₁ + F₂)` with `λ_t = λ₀ γ^t` at step `t`; `γ = 1`
    /// keeps `λ` fixed.
    Regularized { lambda0: f64, gamma: f64 },
}

impl ToyObjective {
    pub fn lambda_at(&self, step: usize) -> f64 {
        match *self {
            ToyObjective::Regularized { lambda0, gamma } => lambda0 * gamma.powi(step as i32),
            _ => 0.0,
        }
    }

    pub fn gradient(&self, t: [f64; 2], step: usize) -> Result<[f64; 2], OracleError> {
        let [g, g1, g2] = toy_gradients(t[0], t[1])?;
        let (a, b) = match *self {
            ToyObjective::Snl => (0.0, 0.0),
            ToyObjective::SnlPlusF1 => (1.0, 0.0),
            ToyObjective::SnlPlusF2 => (0.0, 1.0),
            ToyObjective::Regularized { .. } => {
                let l = self.lambda_at(step);
                (l, l)
            }
        };
        Ok([g[0] + a * g1[0] + b * g2[0], g[1] + a * g1[1] + b * g2[1]])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<[f64; 2]>,
    /// First step index whose iterate lies within `ball` of (1, 1).
    pub steps_to_ball: Option<usize>,
    pub ball: f64,
    pub final_point: [f64; 2],
    pub final_gradient_norm: f64,
    /// Final gradient norm below `1e-6`.
    pub converged: bool,
    pub step_halvings: usize,
}

impl Trajectory {
    pub fn distance_to_optimum(&self) -> f64 {
        let [a, b] = self.final_point;
        ((a - 1.0).powi(2) + (b - 1.0).powi(2)).sqrt()
    }
}

const GRADIENT_TOLERANCE: f64 = 1e-6;
const MAX_HALVINGS: usize = 60;

/// Fixed-step gradient descent. A step that would leave the positive
/// quadrant is halved until it does not.
pub fn toy_descent(
    objective: ToyObjective,
    init: [f64; 2],
    step_size: f64,
    max_steps: usize,
) -> Result<Trajectory, OracleError> {
    check(init[0], init[1])?;
    let ball = 1e-2;
    let dist = |p: [f64; 2]| ((p[0] - 1.0).powi(2) + (p[1] - 1.0).powi(2)).sqrt();
    let mut points = vec![init];
    let mut p = init;
    let mut steps_to_ball = (dist(p) < ball).then_some(0);
    let mut halvings = 0;
    for t in 0..max_steps {
        let g = objective.gradient(p, t)?;
        let mut eta = step_size;
        let mut next = [p[0] - eta * g[0], p[1] - eta * g[1]];
        let mut tries = 0;
        while !(next[0] > 0.0 && next[1] > 0.0) {
            tries += 1;
            if tries > MAX_HALVINGS {
                return Err(OracleError::Diverged(format!("cannot stay in the positive quadrant at step {t}")));
            }
            eta *= 0.5;
            halvings += 1;
            next = [p[0] - eta * g[0], p[1] - eta * g[1]];
        }
        if !(next[0].is_finite() && next[1].is_finite()) {
            return Err(OracleError::Diverged(format!("non-finite iterate at step {t}")));
        }
        p = next;
        points.push(p);
        if steps_to_ball.is_none() && dist(p) < ball {
            steps_to_ball = Some(t + 1);
        }
    }
    let g = objective.gradient(p, max_steps)?;
    let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
    Ok(Trajectory {
        points,
        steps_to_ball,
        ball,
        final_point: p,
        final_gradient_norm: gn,
        converged: gn < GRADIENT_TOLERANCE,
        step_halvings: halvings,
    })
}

/// Outcome of the four qualitative toy checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub snl: Trajectory,
    pub snl_f1: Trajectory,
    pub fixed: Trajectory,
    pub annealed: Trajectory,
    pub annealed_objective: ToyObjective,
    /// SNL alone ends within 1e-2 of (1, 1).
    pub snl_converges: bool,
    /// Adding F₁ reaches the 1e-2 ball in strictly fewer steps.
    pub f1_is_faster: bool,
    /// Fixed `λ = 1` settles farther than 5e-2 from (1, 1).
    pub fixed_lambda_is_biased: bool,
    /// Exponentially decayed `λ` ends within 1e-2 of (1, 1).
    pub annealed_converges: bool,
}

impl ToyReport {
    pub fn passed(&self) -> bool {
        self.snl_converges && self.f1_is_faster && self.fixed_lambda_is_biased && self.annealed_converges
    }
}

pub const TOY_INIT: [f64; 2] = [2.0, 2.0];
pub const TOY_STEP: f64 = 0.05;
pub const TOY_STEPS: usize = 5000;
/// Per-step decay of `λ` in the annealed run.
pub const TOY_DECAY: f64 = 0.99;

/// Runs the four descents from (2, 2) with step 0.05. `decay` sets `γ` of
/// the annealed run (starting at `λ₀ = 1`).
pub fn toy_report(decay: f64) -> Result<ToyReport, OracleError> {
    let snl = toy_descent(ToyObjective::Snl, TOY_INIT, TOY_STEP, TOY_STEPS)?;
    let snl_f1 = toy_descent(ToyObjective::SnlPlusF1, TOY_INIT, TOY_STEP, TOY_STEPS)?;
    let fixed_obj = ToyObjective::Regularized {
        lambda0: 1.0,
        gamma: 1.0,
    };
    let fixed = toy_descent(fixed_obj, TOY_INIT, TOY_STEP, TOY_STEPS)?;
    let annealed_objective = ToyObjective::Regularized {
        lambda0: 1.0,
        gamma: decay,
    };
    // a corrupted schedule may diverge; that is a failed check, not an error
    let annealed = match toy_descent(annealed_objective, TOY_INIT, TOY_STEP, TOY_STEPS) {
        Ok(t) => t,
        Err(OracleError::Diverged(_)) => Trajectory {
            points: vec![TOY_INIT],
            steps_to_ball: None,
            ball: 1e-2,
            final_point: [f64::NAN, f64::NAN],
            final_gradient_norm: f64::NAN,
            converged: false,
            step_halvings: 0,
        },
        Err(e) => return Err(e),
    };
    let snl_converges = snl.distance_to_optimum() < 1e-2;
    let f1_is_faster = match (snl_f1.steps_to_ball, snl.steps_to_ball) {
        (Some(a), Some(b)) => a < b,
        _ => false,
    };
    let fixed_lambda_is_biased = fixed.converged && fixed.distance_to_optimum() > 5e-2;
    let annealed_converges = annealed.distance_to_optimum() < 1e-2;
    Ok(ToyReport {
        snl,
        snl_f1,
        fixed,
        annealed,
        annealed_objective,
        snl_converges,
        f1_is_faster,
        fixed_lambda_is_biased,
        annealed_converges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::check_gradient;

    #[test]
    fn values_at_the_optimum() {
        let l = toy_losses(1.0, 1.0).unwrap();
        assert!((l.snl - 1.0).abs() < 1e-15);
        assert!(l.f1.abs() < 1e-15);
        assert!((l.f2 - 0.5 * 2f64.ln()).abs() < 1e-15);
        let g = toy_gradients(1.0, 1.0).unwrap();
        assert_eq!(g[0], [0.0, 0.0]);
        assert!(toy_losses(0.0, 1.0).is_err());
        assert!(toy_losses(1.0, -2.0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for p in [[1.5, 0.8], [0.3, 2.2], [1.0, 1.0], [2.0, 2.0]] {
            let picks: [fn(ToyLosses) -> f64; 3] = [|l| l.snl, |l| l.f1, |l| l.f2];
            for (k, pick) in picks.iter().enumerate() {
                let g = toy_gradients(p[0], p[1]).unwrap()[k];
                let r = check_gradient(|x| pick(toy_losses(x[0], x[1]).unwrap()), &g, &p, 1e-6).unwrap();
                assert!(r.max_relative_error < 1e-5 || g.iter().all(|v| v.abs() < 1e-9), "{k} at {p:?}: {r:?}");
            }
        }
    }

    /// Midpoint quadrature of `∫∫ a(x) ln(a(x)/b(x)) dx` over a box that
    /// covers both densities.
    fn quad_kl(a: impl Fn(f64, f64) -> (f64, f64), half: f64, n: usize) -> f64 {
        let h = 2.0 * half / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            let x1 = -half + (i as f64 + 0.5) * h;
            for j in 0..n {
                let x2 = -half + (j as f64 + 0.5) * h;
                let (la, lb) = a(x1, x2);
                total += la.exp() * (la - lb);
            }
        }
        total * h * h
    }

    fn ln_normal(x: f64, mu: f64, var: f64) -> f64 {
        -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mu).powi(2) / (2.0 * var)
    }

    #[test]
    fn closed_forms_match_quadrature_of_their_definitions() {
        let (t1, t2) = (1.3, 0.7);
        let (v1, v2) = (t1 * t1, t2 * t2);
        let lp = |x1: f64, x2: f64| ln_normal(x1, 0.0, 1.0) + ln_normal(x2, x1, 1.0);
        let lq = |x1: f64, x2: f64| ln_normal(x1, 0.0, v1) + ln_normal(x2, x1, v2);
        // q(x₂) = N(0, θ₁² + θ₂²)
        let lq_indep = |x1: f64, x2: f64| ln_normal(x1, 0.0, v1) + ln_normal(x2, 0.0, v1 + v2);
        let n = 1200;
        let forward = quad_kl(|a, b| (lp(a, b), lq(a, b)), 14.0, n);
        let reverse = quad_kl(|a, b| (lq(a, b), lp(a, b)), 14.0, n);
        let mi = quad_kl(|a, b| (lq(a, b), lq_indep(a, b)), 14.0, n);
        let l = toy_losses(t1, t2).unwrap();
        // −E_p ln q differs from KL(p‖q) by the entropy of p, ln(2πe); the
        // printed loss keeps the 1 and drops ln 2π
        assert!((l.snl - (forward + 1.0)).abs() < 1e-6, "{} vs {}", l.snl, forward + 1.0);
        assert!((l.f1 - reverse).abs() < 1e-6, "{} vs {reverse}", l.f1);
        // the printed F₂ equals +I(x₁; x₂) under q
        assert!((l.f2 - mi).abs() < 1e-6, "{} vs {mi}", l.f2);
    }

    #[test]
    fn four_qualitative_outcomes() {
        let r = toy_report(TOY_DECAY).unwrap();
        assert!(r.snl_converges, "{:?}", r.snl.final_point);
        assert!(r.f1_is_faster, "{:?} vs {:?}", r.snl_f1.steps_to_ball, r.snl.steps_to_ball);
        assert!(r.fixed_lambda_is_biased, "{:?}", r.fixed.final_point);
        assert!(r.annealed_converges, "{:?}", r.annealed.final_point);
        assert!(r.passed());
    }

    #[test]
    fn corrupted_decay_fails_the_annealed_check() {
        for decay in [1.0, 1.001, 0.99999] {
            assert!(!toy_report(decay).unwrap().passed(), "decay {decay}");
        }
    }

    #[test]
    fn leaving_the_quadrant_halves_the_step() {
        let t = toy_descent(ToyObjective::SnlPlusF1, [3.0, 3.0], 2.0, 3).unwrap();
        assert!(t.step_halvings > 0);
        assert!(t.points.iter().all(|p| p[0] > 0.0 && p[1] > 0.0));
    }
}
