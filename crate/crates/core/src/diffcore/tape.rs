use super::matrix::{matmul, matmul_nt_acc, matmul_tn_acc, Matrix};
use thiserror::Error;

/// `ln(1e300)`: arguments of [`Tape::exp`] are clamped to `±` this value.
pub const EXP_ARG_LIMIT: f64 = 690.775_527_898_213_7;
/// Arguments of [`Tape::log`] are clamped to `[LOG_FLOOR, LOG_CEIL]`.
pub const LOG_FLOOR: f64 = 1e-300;
pub const LOG_CEIL: f64 = 1e300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("backward root must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    ColAffine(Var, Vec<f64>),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumColGroups(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    RepeatRows(Var, usize),
    TakeRows(Var, Vec<usize>),
    Reshape(Var),
    LogSumExpRows(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Reverse-mode differentiation tape over dense matrices.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it. Leaves created with [`Tape::param`] are differentiable; leaves from
/// [`Tape::constant`] are not, and neither is anything computed purely from
/// constants, which keeps the backward sweep restricted to the parameter
/// subgraph.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    saturations: usize,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `∂root/∂var`, or `None` if `var` does not influence the root through
    /// differentiable nodes.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.adjoints.get(var.0).and_then(|a| a.as_ref())
    }

    /// Like [`get`](Self::get) but materializes zeros of the given shape.
    pub fn get_or_zeros(&self, var: Var, rows: usize, cols: usize) -> Matrix {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of `exp`/`log` entries clamped so far.
    pub fn saturations(&self) -> usize {
        self.saturations
    }

    pub fn saturated(&self) -> bool {
        self.saturations > 0
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    /// Value of a scalar node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.item()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn v(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, false)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{op}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.v(a), self.v(b));
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Matrix::from_vec(va.rows(), va.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("add", a, b);
        let value = self.zip_map(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Add(a, b), value, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("sub", a, b);
        let value = self.zip_map(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Sub(a, b), value, ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("mul", a, b);
        let value = self.zip_map(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Mul(a, b), value, ng)
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("div", a, b);
        let value = self.zip_map(a, b, |x, y| x / y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Div(a, b), value, ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.v(a).map(|x| -x);
        let ng = self.ng(a);
        self.push(Op::Neg(a), value, ng)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.v(a).map(|x| x * factor);
        let ng = self.ng(a);
        self.push(Op::Scale(a, factor), value, ng)
    }

    /// `a + c` for a constant `c`.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.v(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(Op::Offset(a), value, ng)
    }

    /// `a + c` for a constant matrix `c` of the same shape.
    pub fn add_const(&mut self, a: Var, c: &Matrix) -> Var {
        assert_eq!(self.shape(a), c.shape(), "add_const: shape mismatch");
        let mut value = self.v(a).clone();
        value.add_assign(c);
        let ng = self.ng(a);
        self.push(Op::Offset(a), value, ng)
    }

    /// Matrix product `a (r×k) · b (k×c)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.v(a), self.v(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MatMul(a, b), value, ng)
    }

    /// `m (r×c) + row (1×c)` broadcast over rows.
    pub fn add_row(&mut self, m: Var, row: Var) -> Var {
        let (r, c) = self.shape(m);
        assert_eq!(self.shape(row), (1, c), "add_row: expected 1x{c} row");
        let mut value = self.v(m).clone();
        let rv = self.v(row).as_slice().to_vec();
        for i in 0..r {
            for (x, b) in value.row_mut(i).iter_mut().zip(&rv) {
                *x += b;
            }
        }
        let ng = self.ng(m) || self.ng(row);
        self.push(Op::AddRow(m, row), value, ng)
    }

    /// `m (r×c) + col (r×1)` broadcast over columns.
    pub fn add_col(&mut self, m: Var, col: Var) -> Var {
        let (r, _) = self.shape(m);
        assert_eq!(self.shape(col), (r, 1), "add_col: expected {r}x1 column");
        let mut value = self.v(m).clone();
        for i in 0..r {
            let b = self.v(col).as_slice()[i];
            for x in value.row_mut(i) {
                *x += b;
            }
        }
        let ng = self.ng(m) || self.ng(col);
        self.push(Op::AddCol(m, col), value, ng)
    }

    /// `m (r×c) * col (r×1)` broadcast over columns.
    pub fn mul_col(&mut self, m: Var, col: Var) -> Var {
        let (r, _) = self.shape(m);
        assert_eq!(self.shape(col), (r, 1), "mul_col: expected {r}x1 column");
        let mut value = self.v(m).clone();
        for i in 0..r {
            let b = self.v(col).as_slice()[i];
            for x in value.row_mut(i) {
                *x *= b;
            }
        }
        let ng = self.ng(m) || self.ng(col);
        self.push(Op::MulCol(m, col), value, ng)
    }

    /// Per-column affine map `y_ij = x_ij * scale_j + shift_j` with constant
    /// coefficients.
    pub fn col_affine(&mut self, a: Var, scale: &[f64], shift: &[f64]) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(scale.len(), c, "col_affine: scale length");
        assert_eq!(shift.len(), c, "col_affine: shift length");
        let mut value = self.v(a).clone();
        for i in 0..r {
            for ((x, s), t) in value.row_mut(i).iter_mut().zip(scale).zip(shift) {
                *x = *x * s + t;
            }
        }
        let ng = self.ng(a);
        self.push(Op::ColAffine(a, scale.to_vec()), value, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.v(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(Op::Tanh(a), value, ng)
    }

    /// Elementwise `exp`, with the argument clamped to `±EXP_ARG_LIMIT`.
    /// Clamped entries carry zero gradient and count as saturations.
    pub fn exp(&mut self, a: Var) -> Var {
        let mut clamped = 0;
        let value = self.v(a).map(|x| {
            if x.abs() > EXP_ARG_LIMIT {
                x.clamp(-EXP_ARG_LIMIT, EXP_ARG_LIMIT).exp()
            } else {
                x.exp()
            }
        });
        for &x in self.v(a).as_slice() {
            if x.abs() > EXP_ARG_LIMIT {
                clamped += 1;
            }
        }
        self.saturations += clamped;
        let ng = self.ng(a);
        self.push(Op::Exp(a), value, ng)
    }

    /// Elementwise natural log, argument clamped to `[LOG_FLOOR, LOG_CEIL]`.
    pub fn log(&mut self, a: Var) -> Var {
        let mut clamped = 0;
        for &x in self.v(a).as_slice() {
            if !(LOG_FLOOR..=LOG_CEIL).contains(&x) {
                clamped += 1;
            }
        }
        let value = self.v(a).map(|x| x.clamp(LOG_FLOOR, LOG_CEIL).ln());
        self.saturations += clamped;
        let ng = self.ng(a);
        self.push(Op::Log(a), value, ng)
    }

    /// `ln(1 + eˣ)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.v(a).map(softplus);
        let ng = self.ng(a);
        self.push(Op::Softplus(a), value, ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.v(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(Op::Square(a), value, ng)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.v(a).as_slice().iter().sum();
        let ng = self.ng(a);
        self.push(Op::Sum(a), Matrix::scalar(s), ng)
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.v(a);
        let s = m.as_slice().iter().sum::<f64>() / m.len() as f64;
        let ng = self.ng(a);
        self.push(Op::Mean(a), Matrix::scalar(s), ng)
    }

    /// Per-row sums: `r×c → r×1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.v(a);
        let data: Vec<f64> = m.row_iter().map(|r| r.iter().sum()).collect();
        let value = Matrix::from_vec(m.rows(), 1, data);
        let ng = self.ng(a);
        self.push(Op::SumRows(a), value, ng)
    }

    /// Sums consecutive groups of `group` columns: `r×(g·k) → r×k`.
    pub fn sum_col_groups(&mut self, a: Var, group: usize) -> Var {
        let m = self.v(a);
        assert!(
            group > 0 && m.cols() % group == 0,
            "sum_col_groups: {} columns not divisible by {group}",
            m.cols()
        );
        let k = m.cols() / group;
        let mut data = Vec::with_capacity(m.rows() * k);
        for row in m.row_iter() {
            for chunk in row.chunks(group) {
                data.push(chunk.iter().sum());
            }
        }
        let value = Matrix::from_vec(m.rows(), k, data);
        let ng = self.ng(a);
        self.push(Op::SumColGroups(a, group), value, ng)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let m = self.v(a);
        assert!(start <= end && end <= m.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(m.rows() * (end - start));
        for row in m.row_iter() {
            data.extend_from_slice(&row[start..end]);
        }
        let value = Matrix::from_vec(m.rows(), end - start, data);
        let ng = self.ng(a);
        self.push(Op::SliceCols(a, start), value, ng)
    }

    /// Horizontal concatenation.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, rows, "concat_cols: row mismatch");
                self.shape(p).1
            })
            .sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.v(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Matrix::from_vec(rows, cols, data),
            ng,
        )
    }

    /// Repeats every row `times` times consecutively: `r×c → (r·times)×c`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let m = self.v(a);
        let mut data = Vec::with_capacity(m.len() * times);
        for row in m.row_iter() {
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        let value = Matrix::from_vec(m.rows() * times, m.cols(), data);
        let ng = self.ng(a);
        self.push(Op::RepeatRows(a, times), value, ng)
    }

    /// Rows at `indices` (repetition allowed).
    pub fn take_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let value = self.v(a).select_rows(indices);
        let ng = self.ng(a);
        self.push(Op::TakeRows(a, indices.to_vec()), value, ng)
    }

    /// Row-major reinterpretation with a new shape of equal size.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let m = self.v(a);
        assert_eq!(m.len(), rows * cols, "reshape: size mismatch");
        let value = Matrix::from_vec(rows, cols, m.as_slice().to_vec());
        let ng = self.ng(a);
        self.push(Op::Reshape(a), value, ng)
    }

    /// Per-row `ln Σ_j exp(a_ij)`: `r×c → r×1`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let m = self.v(a);
        let data: Vec<f64> = m.row_iter().map(logsumexp).collect();
        let value = Matrix::from_vec(m.rows(), 1, data);
        let ng = self.ng(a);
        self.push(Op::LogSumExpRows(a), value, ng)
    }

    /// Populates adjoints of every differentiable node reachable from `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, TapeError> {
        let (rows, cols) = self.shape(root);
        if (rows, cols) != (1, 1) {
            return Err(TapeError::NonScalarRoot { rows, cols });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        if !self.nodes[root.0].needs_grad {
            return Ok(Gradients { adjoints: adj });
        }
        adj[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(d) = adj[idx].take() else {
                continue;
            };
            self.propagate(node, &d, &mut adj);
            adj[idx] = Some(d);
        }
        Ok(Gradients { adjoints: adj })
    }

    fn propagate(&self, node: &Node, d: &Matrix, adj: &mut [Option<Matrix>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(adj, *a, || d.clone());
                self.acc(adj, *b, || d.clone());
            }
            Op::Sub(a, b) => {
                self.acc(adj, *a, || d.clone());
                self.acc(adj, *b, || d.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.v(*a), self.v(*b));
                self.acc(adj, *a, || elementwise(d, vb, |g, y| g * y));
                self.acc(adj, *b, || elementwise(d, va, |g, x| g * x));
            }
            Op::Div(a, b) => {
                let vb = self.v(*b);
                self.acc(adj, *a, || elementwise(d, vb, |g, y| g / y));
                self.acc(adj, *b, || {
                    // ∂(a/b)/∂b = -(a/b)/b
                    let t = elementwise(d, y, |g, q| g * q);
                    elementwise(&t, vb, |t, y| -t / y)
                });
            }
            Op::Neg(a) => self.acc(adj, *a, || d.map(|x| -x)),
            Op::Scale(a, f) => self.acc(adj, *a, || d.map(|x| x * f)),
            Op::Offset(a) | Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                self.acc(adj, *a, || Matrix::from_vec(r, c, d.as_slice().to_vec()))
            }
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    let (r, c) = self.shape(*a);
                    let slot = adj[a.0].get_or_insert_with(|| Matrix::zeros(r, c));
                    matmul_nt_acc(d, self.v(*b), slot);
                }
                if self.ng(*b) {
                    let (r, c) = self.shape(*b);
                    let slot = adj[b.0].get_or_insert_with(|| Matrix::zeros(r, c));
                    matmul_tn_acc(self.v(*a), d, slot);
                }
            }
            Op::AddRow(m, row) => {
                self.acc(adj, *m, || d.clone());
                self.acc(adj, *row, || {
                    let mut s = vec![0.0; d.cols()];
                    for r in d.row_iter() {
                        for (acc, g) in s.iter_mut().zip(r) {
                            *acc += g;
                        }
                    }
                    Matrix::from_vec(1, d.cols(), s)
                });
            }
            Op::AddCol(m, col) => {
                self.acc(adj, *m, || d.clone());
                self.acc(adj, *col, || {
                    Matrix::from_vec(d.rows(), 1, d.row_iter().map(|r| r.iter().sum()).collect())
                });
            }
            Op::MulCol(m, col) => {
                let (vm, vc) = (self.v(*m), self.v(*col));
                self.acc(adj, *m, || {
                    let mut g = d.clone();
                    for i in 0..g.rows() {
                        let s = vc.as_slice()[i];
                        for x in g.row_mut(i) {
                            *x *= s;
                        }
                    }
                    g
                });
                self.acc(adj, *col, || {
                    let data = d
                        .row_iter()
                        .zip(vm.row_iter())
                        .map(|(g, x)| g.iter().zip(x).map(|(a, b)| a * b).sum())
                        .collect();
                    Matrix::from_vec(d.rows(), 1, data)
                });
            }
            Op::ColAffine(a, scale) => self.acc(adj, *a, || {
                let mut g = d.clone();
                for i in 0..g.rows() {
                    for (x, s) in g.row_mut(i).iter_mut().zip(scale) {
                        *x *= s;
                    }
                }
                g
            }),
            Op::Tanh(a) => self.acc(adj, *a, || elementwise(d, y, |g, t| g * (1.0 - t * t))),
            Op::Exp(a) => {
                let va = self.v(*a);
                self.acc(adj, *a, || {
                    let t = elementwise(d, y, |g, e| g * e);
                    elementwise(&t, va, |t, x| if x.abs() > EXP_ARG_LIMIT { 0.0 } else { t })
                })
            }
            Op::Log(a) => {
                let va = self.v(*a);
                self.acc(adj, *a, || {
                    elementwise(d, va, |g, x| {
                        if (LOG_FLOOR..=LOG_CEIL).contains(&x) {
                            g / x
                        } else {
                            0.0
                        }
                    })
                })
            }
            Op::Softplus(a) => {
                let va = self.v(*a);
                self.acc(adj, *a, || elementwise(d, va, |g, x| g * sigmoid(x)))
            }
            Op::Square(a) => {
                let va = self.v(*a);
                self.acc(adj, *a, || elementwise(d, va, |g, x| 2.0 * g * x))
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                let g = d.item();
                self.acc(adj, *a, || Matrix::filled(r, c, g))
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                let g = d.item() / (r * c) as f64;
                self.acc(adj, *a, || Matrix::filled(r, c, g))
            }
            Op::SumRows(a) => {
                let (r, c) = self.shape(*a);
                self.acc(adj, *a, || {
                    let mut g = Matrix::zeros(r, c);
                    for i in 0..r {
                        let gi = d.as_slice()[i];
                        g.row_mut(i).fill(gi);
                    }
                    g
                })
            }
            Op::SumColGroups(a, group) => {
                let (r, c) = self.shape(*a);
                self.acc(adj, *a, || {
                    let mut g = Matrix::zeros(r, c);
                    for i in 0..r {
                        let drow = d.row(i);
                        for (j, x) in g.row_mut(i).iter_mut().enumerate() {
                            *x = drow[j / group];
                        }
                    }
                    g
                })
            }
            Op::SliceCols(a, start) => {
                if self.ng(*a) {
                    let (r, c) = self.shape(*a);
                    let slot = adj[a.0].get_or_insert_with(|| Matrix::zeros(r, c));
                    let w = d.cols();
                    for i in 0..r {
                        let dst = &mut slot.row_mut(i)[*start..start + w];
                        for (x, g) in dst.iter_mut().zip(d.row(i)) {
                            *x += g;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, w) = self.shape(p);
                    if self.ng(p) {
                        let slot = adj[p.0].get_or_insert_with(|| Matrix::zeros(r, w));
                        for i in 0..r {
                            let src = &d.row(i)[offset..offset + w];
                            for (x, g) in slot.row_mut(i).iter_mut().zip(src) {
                                *x += g;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::RepeatRows(a, times) => {
                if self.ng(*a) {
                    let (r, c) = self.shape(*a);
                    let slot = adj[a.0].get_or_insert_with(|| Matrix::zeros(r, c));
                    for i in 0..r {
                        for k in 0..*times {
                            let src = d.row(i * times + k);
                            for (x, g) in slot.row_mut(i).iter_mut().zip(src) {
                                *x += g;
                            }
                        }
                    }
                }
            }
            Op::TakeRows(a, indices) => {
                if self.ng(*a) {
                    let (r, c) = self.shape(*a);
                    let slot = adj[a.0].get_or_insert_with(|| Matrix::zeros(r, c));
                    for (k, &i) in indices.iter().enumerate() {
                        for (x, g) in slot.row_mut(i).iter_mut().zip(d.row(k)) {
                            *x += g;
                        }
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                let va = self.v(*a);
                self.acc(adj, *a, || {
                    let mut g = Matrix::zeros(va.rows(), va.cols());
                    for i in 0..va.rows() {
                        let lse = y.as_slice()[i];
                        let gi = d.as_slice()[i];
                        if lse == f64::NEG_INFINITY {
                            continue;
                        }
                        for (x, s) in g.row_mut(i).iter_mut().zip(va.row(i)) {
                            *x = gi * (s - lse).exp();
                        }
                    }
                    g
                })
            }
        }
    }

    fn acc(&self, adj: &mut [Option<Matrix>], target: Var, grad: impl FnOnce() -> Matrix) {
        if !self.ng(target) {
            return;
        }
        let g = grad();
        match &mut adj[target.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

/// Numerically stable `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    // ln(eʸ - 1) = y + ln(1 - e⁻ʸ)
    y + (-(-y).exp()).ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ exp(xᵢ)`; `-∞` for an empty or all-`-∞` slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
