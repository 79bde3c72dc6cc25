use super::LossError;
use crate::diffcore::Matrix;
use rand::Rng;

/// Contrastive atoms for estimating `Z(x) = Σ_m w_m q(θ_m | x) / p(θ_m)`.
///
/// Each batch element owns `per_element` consecutive atom rows. Slot 0 is
/// always the element's own θ; its weight may be zero (`-∞` log weight) when
/// an explicit atom list already covers it.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSet {
    atoms: Matrix,
    per_element: usize,
    /// `ln w_m − ln p(θ_m)`, one row per element.
    log_offsets: Matrix,
    /// `ln p(θ)` of each element's own θ.
    own_log_prior: Vec<f64>,
}

impl AtomSet {
    pub fn from_parts(
        atoms: Matrix,
        per_element: usize,
        log_offsets: Matrix,
        own_log_prior: Vec<f64>,
    ) -> Result<Self, LossError> {
        let n = own_log_prior.len();
        if per_element == 0 {
            return Err(LossError::Atoms("need at least one atom per element".into()));
        }
        if atoms.rows() != n * per_element || log_offsets.shape() != (n, per_element) {
            return Err(LossError::Atoms(format!(
                "inconsistent atom layout: {} atom rows, offsets {:?}, {n} elements × {per_element}",
                atoms.rows(),
                log_offsets.shape()
            )));
        }
        Ok(Self {
            atoms,
            per_element,
            log_offsets,
            own_log_prior,
        })
    }

    /// The same explicit atom list for every element, after an own-θ slot of
    /// log weight `own_log_weight` (use `f64::NEG_INFINITY` to exclude it).
    pub fn shared(
        own: &Matrix,
        atoms: &Matrix,
        log_weights: &[f64],
        own_log_weight: f64,
        log_prior: &dyn Fn(&[f64]) -> f64,
    ) -> Result<Self, LossError> {
        if atoms.rows() != log_weights.len() || atoms.cols() != own.cols() {
            return Err(LossError::Atoms("atom list and weights disagree".into()));
        }
        let n = own.rows();
        let m = atoms.rows() + 1;
        let mut rows = Vec::with_capacity(n * m * own.cols());
        let mut offsets = Vec::with_capacity(n * m);
        let atom_offsets: Vec<f64> = atoms
            .row_iter()
            .zip(log_weights)
            .map(|(a, w)| w - log_prior(a))
            .collect();
        let mut own_lp = Vec::with_capacity(n);
        for i in 0..n {
            let lp = log_prior(own.row(i));
            own_lp.push(lp);
            rows.extend_from_slice(own.row(i));
            offsets.push(own_log_weight - lp);
            for a in atoms.row_iter() {
                rows.extend_from_slice(a);
            }
            offsets.extend_from_slice(&atom_offsets);
        }
        Self::from_parts(
            Matrix::from_vec(n * m, own.cols(), rows),
            m,
            Matrix::from_vec(n, m, offsets),
            own_lp,
        )
    }

    pub fn elements(&self) -> usize {
        self.own_log_prior.len()
    }

    pub fn per_element(&self) -> usize {
        self.per_element
    }

    pub fn atoms(&self) -> &Matrix {
        &self.atoms
    }

    pub fn log_offsets(&self) -> &Matrix {
        &self.log_offsets
    }

    pub fn own_log_prior(&self) -> &[f64] {
        &self.own_log_prior
    }

    /// Restriction to the given elements, in order.
    pub fn select(&self, elements: &[usize]) -> Self {
        let m = self.per_element;
        let rows: Vec<usize> = elements.iter().flat_map(|&e| e * m..(e + 1) * m).collect();
        Self {
            atoms: self.atoms.select_rows(&rows),
            per_element: m,
            log_offsets: self.log_offsets.select_rows(elements),
            own_log_prior: elements.iter().map(|&e| self.own_log_prior[e]).collect(),
        }
    }
}

/// Draws `M` equally weighted atoms per element: the element's own θ plus
/// `M − 1` rows picked uniformly from a pool representing `p̃_r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtomicNormalizer {
    pub atoms: usize,
}

impl Default for AtomicNormalizer {
    fn default() -> Self {
        Self { atoms: 10 }
    }
}

impl AtomicNormalizer {
    pub fn new(atoms: usize) -> Self {
        Self { atoms }
    }

    /// `own_index[i]`, when given, is excluded from element `i`'s draws so
    /// that the own θ is not counted twice.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        own: &Matrix,
        own_index: Option<&[usize]>,
        pool: &Matrix,
        log_prior: &dyn Fn(&[f64]) -> f64,
        rng: &mut R,
    ) -> Result<AtomSet, LossError> {
        let m = self.atoms;
        if m == 0 {
            return Err(LossError::Atoms("atom count must be at least 1".into()));
        }
        if m > 1 && pool.rows() == 0 {
            return Err(LossError::Atoms("empty atom pool".into()));
        }
        let n = own.rows();
        let log_w = -(m as f64).ln();
        let mut rows = Vec::with_capacity(n * m * own.cols());
        let mut offsets = Vec::with_capacity(n * m);
        let mut own_lp = Vec::with_capacity(n);
        for i in 0..n {
            let lp = log_prior(own.row(i));
            own_lp.push(lp);
            rows.extend_from_slice(own.row(i));
            offsets.push(log_w - lp);
            let skip = own_index.map(|ix| ix[i]).filter(|_| pool.rows() > 1);
            for _ in 1..m {
                let j = match skip {
                    Some(s) => {
                        let j = rng.random_range(0..pool.rows() - 1);
                        if j >= s {
                            j + 1
                        } else {
                            j
                        }
                    }
                    None => rng.random_range(0..pool.rows()),
                };
                let a = pool.row(j);
                rows.extend_from_slice(a);
                offsets.push(log_w - log_prior(a));
            }
        }
        AtomSet::from_parts(
            Matrix::from_vec(n * m, own.cols(), rows),
            m,
            Matrix::from_vec(n, m, offsets),
            own_lp,
        )
    }
}
