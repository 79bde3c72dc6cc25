use super::OracleError;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

const ROW_TOLERANCE: f64 = 1e-12;

/// Every distribution of a finite θ × x problem.
///
/// Conditionals are row-stochastic: `p_sim[θ][x]`, `q_psi[θ][x]` and
/// `q_phi[x][θ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    /// Proposal weights `p̃_r(θ)`.
    pub proposal: Vec<f64>,
    /// Prior `p(θ)`.
    pub prior: Vec<f64>,
    pub p_sim: Vec<Vec<f64>>,
    pub q_psi: Vec<Vec<f64>>,
    pub q_phi: Vec<Vec<f64>>,
}

fn check_simplex(name: &'static str, row: Option<usize>, v: &[f64], len: usize) -> Result<(), OracleError> {
    if v.len() != len {
        return Err(OracleError::Shape {
            table: name,
            expected: len,
            got: v.len(),
        });
    }
    if let Some(i) = v.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(OracleError::Cell {
            table: name,
            row: row.unwrap_or(0),
            col: i,
            reason: format!("weight {} is not a nonnegative number", v[i]),
        });
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > ROW_TOLERANCE {
        return Err(OracleError::NotNormalized {
            table: name,
            row,
            sum: s,
        });
    }
    Ok(())
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|p| p / s).collect()
}

fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    normalized((0..n).map(|_| Exp1.sample(rng)).map(|e: f64| e + 1e-3).collect())
}

impl DiscreteJoint {
    pub fn thetas(&self) -> usize {
        self.proposal.len()
    }

    pub fn xs(&self) -> usize {
        self.p_sim.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let (nt, nx) = (self.thetas(), self.xs());
        if nt == 0 || nx == 0 {
            return Err(OracleError::Shape {
                table: "grid",
                expected: 1,
                got: 0,
            });
        }
        check_simplex("proposal", None, &self.proposal, nt)?;
        check_simplex("prior", None, &self.prior, nt)?;
        for (name, table, rows, cols) in [
            ("p_sim", &self.p_sim, nt, nx),
            ("q_psi", &self.q_psi, nt, nx),
            ("q_phi", &self.q_phi, nx, nt),
        ] {
            if table.len() != rows {
                return Err(OracleError::Shape {
                    table: name,
                    expected: rows,
                    got: table.len(),
                });
            }
            for (i, r) in table.iter().enumerate() {
                check_simplex(name, Some(i), r, cols)?;
            }
        }
        Ok(())
    }

    /// A joint with strictly positive entries everywhere.
    pub fn random<R: Rng + ?Sized>(thetas: usize, xs: usize, rng: &mut R) -> Self {
        let table = |rows: usize, cols: usize, rng: &mut R| (0..rows).map(|_| random_simplex(cols, rng)).collect();
        Self {
            proposal: random_simplex(thetas, rng),
            prior: random_simplex(thetas, rng),
            p_sim: table(thetas, xs, rng),
            q_psi: table(thetas, xs, rng),
            q_phi: table(xs, thetas, rng),
        }
    }

    /// `p_sim(x) = Σ_θ p(θ) p_sim(x|θ)` under the prior.
    pub fn simulator_evidence(&self) -> Vec<f64> {
        mix(&self.prior, &self.p_sim)
    }

    /// `p̃_r(x) = Σ_θ p̃_r(θ) p_sim(x|θ)`.
    pub fn proposal_evidence(&self) -> Vec<f64> {
        mix(&self.proposal, &self.p_sim)
    }

    /// `q̃_ψ(x) = Σ_θ p̃_r(θ) q_ψ(x|θ)`.
    pub fn model_evidence(&self) -> Vec<f64> {
        mix(&self.proposal, &self.q_psi)
    }

    /// The simulator's posterior under the prior, `p_sim(θ|x)`, as `[x][θ]`.
    pub fn exact_posterior(&self) -> Vec<Vec<f64>> {
        let ev = self.simulator_evidence();
        (0..self.xs())
            .map(|x| {
                (0..self.thetas())
                    .map(|t| if ev[x] > 0.0 { self.prior[t] * self.p_sim[t][x] / ev[x] } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// `Z_φ(x) = Σ_θ q_φ(θ|x) p̃_r(θ) / p(θ)` for a posterior table `[x][θ]`.
    pub fn normalizer(&self, q_phi: &[Vec<f64>]) -> Result<Vec<f64>, OracleError> {
        q_phi
            .iter()
            .enumerate()
            .map(|(x, row)| {
                let mut z = 0.0;
                for (t, q) in row.iter().enumerate() {
                    let w = q * self.proposal[t];
                    if w == 0.0 {
                        continue;
                    }
                    if self.prior[t] == 0.0 {
                        return Err(OracleError::Cell {
                            table: "prior",
                            row: 0,
                            col: t,
                            reason: format!("zero prior under positive posterior mass at x = {x}"),
                        });
                    }
                    z += w / self.prior[t];
                }
                Ok(z)
            })
            .collect()
    }

    /// `F(ψ, φ) = −Σ_θ p̃_r(θ) Σ_x q_ψ(x|θ) ln(q_φ(θ|x)/Z_φ(x))` for a
    /// posterior table `[x][θ]`.
    pub fn penalty(&self, q_phi: &[Vec<f64>]) -> Result<f64, OracleError> {
        let z = self.normalizer(q_phi)?;
        let mut total = 0.0;
        for t in 0..self.thetas() {
            for x in 0..self.xs() {
                let w = self.proposal[t] * self.q_psi[t][x];
                if w == 0.0 {
                    continue;
                }
                let q = q_phi[x][t];
                if q == 0.0 || z[x] == 0.0 {
                    return Err(OracleError::Cell {
                        table: "q_phi",
                        row: x,
                        col: t,
                        reason: "zero posterior where the likelihood model has mass".into(),
                    });
                }
                total -= w * (q / z[x]).ln();
            }
        }
        Ok(total)
    }
}

fn mix(weights: &[f64], table: &[Vec<f64>]) -> Vec<f64> {
    let nx = table.first().map_or(0, Vec::len);
    (0..nx).map(|x| weights.iter().zip(table).map(|(w, r)| w * r[x]).sum()).collect()
}

/// `Σ w·ln(a/b)` with `0·ln 0 = 0`; a positive `w·a`-cell against `b = 0`
/// is reported.
fn weighted_log_ratio(table: &'static str, row: usize, w: f64, a: &[f64], b: &[f64]) -> Result<f64, OracleError> {
    let mut s = 0.0;
    for (col, (&pa, &pb)) in a.iter().zip(b).enumerate() {
        if w * pa == 0.0 {
            continue;
        }
        if pb == 0.0 {
            return Err(OracleError::Cell {
                table,
                row,
                col,
                reason: "division by a zero probability".into(),
            });
        }
        s += w * pa * (pa / pb).ln();
    }
    Ok(s)
}

/// Exhaustive sums of every term in the penalty decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteQuantities {
    /// `−Σ p̃_r p_sim ln q_ψ`.
    pub l_snl: f64,
    /// `KL(p̃_r q_ψ ‖ p̃_r p_sim)`.
    pub f1: f64,
    /// `−KL(p̃_r q_ψ ‖ p̃_r q̃_ψ)`, minus the model's mutual information.
    pub f2: f64,
    pub f: f64,
    /// `KL(q̃_ψ ‖ p̃_r(x))`.
    pub r: f64,
    /// `−Σ_θ p̃_r(θ) ln p(θ)`.
    pub c: f64,
    /// The constant as the last line of the decomposition prints it,
    /// `+Σ_θ p̃_r(θ) ln p(θ)`.
    pub c_printed: f64,
    /// `Z_φ(x)` of the joint's own posterior table.
    pub z_phi: Vec<f64>,
    /// `F(ψ, φ)` with the joint's own posterior table.
    pub f_psi_phi: f64,
    /// `F(ψ, φ*)` at the exact posterior.
    pub f_psi_phi_star: f64,
}

impl DiscreteQuantities {
    /// `|F(ψ,φ*) − (F − R + C)|`.
    pub fn theorem1_residual(&self) -> f64 {
        (self.f_psi_phi_star - (self.f - self.r + self.c)).abs()
    }

    /// The same residual with the printed constant.
    pub fn printed_residual(&self) -> f64 {
        (self.f_psi_phi_star - (self.f - self.r + self.c_printed)).abs()
    }
}

pub fn discrete_quantities(joint: &DiscreteJoint) -> Result<DiscreteQuantities, OracleError> {
    joint.validate()?;
    let (nt, nx) = (joint.thetas(), joint.xs());
    let mut l_snl = 0.0;
    let mut f1 = 0.0;
    let mut f2 = 0.0;
    let q_tilde = joint.model_evidence();
    for t in 0..nt {
        let w = joint.proposal[t];
        for x in 0..nx {
            let p = joint.p_sim[t][x];
            if w * p == 0.0 {
                continue;
            }
            let q = joint.q_psi[t][x];
            if q == 0.0 {
                return Err(OracleError::Cell {
                    table: "q_psi",
                    row: t,
                    col: x,
                    reason: "zero likelihood where the simulator has mass".into(),
                });
            }
            l_snl -= w * p * q.ln();
        }
        f1 += weighted_log_ratio("p_sim", t, w, &joint.q_psi[t], &joint.p_sim[t])?;
        f2 -= weighted_log_ratio("q_psi", t, w, &joint.q_psi[t], &q_tilde)?;
    }
    let r = weighted_log_ratio("proposal_evidence", 0, 1.0, &q_tilde, &joint.proposal_evidence())?;
    let mut log_prior = 0.0;
    for t in 0..nt {
        if joint.proposal[t] == 0.0 {
            continue;
        }
        if joint.prior[t] == 0.0 {
            return Err(OracleError::Cell {
                table: "prior",
                row: 0,
                col: t,
                reason: "zero prior under positive proposal weight".into(),
            });
        }
        log_prior += joint.proposal[t] * joint.prior[t].ln();
    }
    Ok(DiscreteQuantities {
        l_snl,
        f1,
        f2,
        f: f1 + f2,
        r,
        c: -log_prior,
        c_printed: log_prior,
        z_phi: joint.normalizer(&joint.q_phi)?,
        f_psi_phi: joint.penalty(&joint.q_phi)?,
        f_psi_phi_star: joint.penalty(&joint.exact_posterior())?,
    })
}

/// Worst residual of the penalty decomposition over random joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub joints: usize,
    pub max_residual: f64,
    /// Worst residual had the printed constant been used.
    pub max_printed_residual: f64,
    pub tolerance: f64,
}

impl Theorem1Report {
    pub fn passed(&self) -> bool {
        self.max_residual < self.tolerance
    }
}

pub fn theorem1_report<R: Rng + ?Sized>(joints: usize, max_states: usize, rng: &mut R) -> Result<Theorem1Report, OracleError> {
    let mut max_residual: f64 = 0.0;
    let mut max_printed: f64 = 0.0;
    for _ in 0..joints {
        let j = DiscreteJoint::random(rng.random_range(1..=max_states), rng.random_range(1..=max_states), rng);
        let q = discrete_quantities(&j)?;
        max_residual = max_residual.max(q.theorem1_residual());
        max_printed = max_printed.max(q.printed_residual());
    }
    Ok(Theorem1Report {
        joints,
        max_residual,
        max_printed_residual: max_printed,
        tolerance: 1e-10,
    })
}
