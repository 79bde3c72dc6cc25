use serde::{Deserialize, Serialize};
use std::fmt;

/// Dense row-major matrix of `f64`.
///
/// Every value on a [`Tape`](super::Tape) is a matrix; vectors are `1 × n`
/// rows and scalars are `1 × 1`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Wraps a row-major buffer. Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "buffer of length {} cannot hold a {rows}x{cols} matrix",
            data.len()
        );
        Self { rows, cols, data }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(1, 1, vec![value])
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self::from_vec(1, values.len(), values.to_vec())
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Self::from_vec(values.len(), 1, values.to_vec())
    }

    /// Stacks equally long rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Value of a `1 × 1` matrix. Panics otherwise.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on a non-scalar matrix");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::from_vec(indices.len(), self.cols, data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries(self.row_iter()).finish()
    }
}

/// `a (r×k) · b (k×c)`.
pub(crate) fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(
        a.cols, b.rows,
        "matmul shape mismatch: {:?} · {:?}",
        a.shape(),
        b.shape()
    );
    let (r, k, c) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        let a_row = &a.data[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * c..(p + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Matrix::from_vec(r, c, out)
}

/// Accumulates `d_out (r×c) · bᵀ` into `acc (r×k)`.
pub(crate) fn matmul_nt_acc(d_out: &Matrix, b: &Matrix, acc: &mut Matrix) {
    let (r, c) = d_out.shape();
    let k = b.rows;
    for i in 0..r {
        let d_row = &d_out.data[i * c..(i + 1) * c];
        let acc_row = &mut acc.data[i * k..(i + 1) * k];
        for (p, slot) in acc_row.iter_mut().enumerate() {
            let b_row = &b.data[p * c..(p + 1) * c];
            let mut s = 0.0;
            for (x, y) in d_row.iter().zip(b_row) {
                s += x * y;
            }
            *slot += s;
        }
    }
}

/// Accumulates `aᵀ · d_out` into `acc (k×c)`.
pub(crate) fn matmul_tn_acc(a: &Matrix, d_out: &Matrix, acc: &mut Matrix) {
    let (r, k) = a.shape();
    let c = d_out.cols;
    for i in 0..r {
        let a_row = &a.data[i * k..(i + 1) * k];
        let d_row = &d_out.data[i * c..(i + 1) * c];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let acc_row = &mut acc.data[p * c..(p + 1) * c];
            for (o, &dv) in acc_row.iter_mut().zip(d_row) {
                *o += aip * dv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_product() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let b = Matrix::from_rows(&[[1.0, 0.0, -1.0], [2.0, 1.0, 0.5]]);
        let c = matmul(&a, &b);
        assert_eq!(
            c,
            Matrix::from_rows(&[[5.0, 2.0, 0.0], [11.0, 4.0, -1.0], [17.0, 6.0, -2.0]])
        );
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]);
        let d = Matrix::from_rows(&[[0.3, 0.7], [-1.0, 2.0]]);
        let b = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);

        let mut acc = Matrix::zeros(2, 3);
        matmul_nt_acc(&d, &b, &mut acc);
        assert!(acc.max_abs_diff(&matmul(&d, &b.transpose())) < 1e-15);

        let mut acc = Matrix::zeros(3, 2);
        matmul_tn_acc(&a, &d, &mut acc);
        assert!(acc.max_abs_diff(&matmul(&a.transpose(), &d)) < 1e-15);
    }
}
