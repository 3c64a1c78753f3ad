//! Minimal dense linear algebra in f64 with fixed reduction order.
//!
//! Everything downstream (encoder, restoration, heads) is built from the
//! kernels here. Two properties are load-bearing and tested rather than
//! assumed: summations always accumulate left-to-right so results are
//! bit-reproducible across runs and thread counts, and every backward kernel
//! agrees with central finite differences of its forward.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Dense feature vector.
pub type FeatureVec = Vec<f64>;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::shape(
                "from_vec",
                format!("{rows}x{cols}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(CoreError::degenerate("from_rows", "no rows"));
        }
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(CoreError::shape("from_rows", c, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data,
        })
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
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.at(c, r))
    }

    /// `self * other`. Inner accumulation runs over k in ascending order for
    /// every output element, so the result is independent of scheduling.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(CoreError::shape(
                "matmul",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                let b_row = other.row(k);
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_transpose_b(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(CoreError::shape(
                "matmul_transpose_b",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                *out.at_mut(i, j) = dot_unchecked(self.row(i), other.row(j));
            }
        }
        Ok(out)
    }

    /// `self^T * other` without materializing the transpose.
    pub fn matmul_transpose_a(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(CoreError::shape(
                "matmul_transpose_a",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(CoreError::shape(
                "add_assign",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// `self * v` treating `v` as a column vector.
    pub fn matvec(&self, v: &[f64]) -> Result<FeatureVec> {
        if self.cols != v.len() {
            return Err(CoreError::shape(
                "matvec",
                format!("{}x{}", self.rows, self.cols),
                v.len(),
            ));
        }
        Ok((0..self.rows)
            .map(|r| dot_unchecked(self.row(r), v))
            .collect())
    }

    /// `self^T * v`, i.e. contraction over rows.
    pub fn matvec_transpose(&self, v: &[f64]) -> Result<FeatureVec> {
        if self.rows != v.len() {
            return Err(CoreError::shape(
                "matvec_transpose",
                format!("{}x{}", self.rows, self.cols),
                v.len(),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &x) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += x * a;
            }
        }
        Ok(out)
    }
}

/// Gradients of `c = a * b` given upstream `dc`: `(dc * b^T, a^T * dc)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, upstream: &Matrix) -> Result<(Matrix, Matrix)> {
    if upstream.rows != a.rows || upstream.cols != b.cols {
        return Err(CoreError::shape(
            "matmul_backward",
            format!("{}x{}", a.rows, b.cols),
            format!("{}x{}", upstream.rows, upstream.cols),
        ));
    }
    let da = upstream.matmul_transpose_b(b)?;
    let db = a.matmul_transpose_a(upstream)?;
    Ok((da, db))
}

#[inline]
fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::shape("dot", a.len(), b.len()));
    }
    Ok(dot_unchecked(a, b))
}

pub fn norm(v: &[f64]) -> f64 {
    dot_unchecked(v, v).sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<FeatureVec> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(CoreError::degenerate("l2_normalize", format!("norm = {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Backward of `v = x / ||x||` given the pre-normalization input `x` and
/// upstream `dv`: `dx = (dv - v <v, dv>) / ||x||`.
pub fn l2_normalize_backward(x: &[f64], upstream: &[f64]) -> Result<FeatureVec> {
    if x.len() != upstream.len() {
        return Err(CoreError::shape(
            "l2_normalize_backward",
            x.len(),
            upstream.len(),
        ));
    }
    let n = norm(x);
    if n == 0.0 || !n.is_finite() {
        return Err(CoreError::degenerate(
            "l2_normalize_backward",
            format!("norm = {n}"),
        ));
    }
    let v: Vec<f64> = x.iter().map(|a| a / n).collect();
    let inner = dot_unchecked(&v, upstream);
    Ok(v.iter()
        .zip(upstream)
        .map(|(vi, ui)| (ui - vi * inner) / n)
        .collect())
}

/// Outer product `a b^T` as a `a.len() x b.len()` matrix.
pub fn outer(a: &[f64], b: &[f64]) -> Matrix {
    Matrix::from_fn(a.len(), b.len(), |r, c| a[r] * b[c])
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::shape("cosine", a.len(), b.len()));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(CoreError::degenerate("cosine", "zero vector"));
    }
    Ok(dot_unchecked(a, b) / (na * nb))
}

/// Elementwise mean of equally sized vectors.
pub fn mean_rows(rows: &[FeatureVec]) -> Result<FeatureVec> {
    let n = rows.len();
    if n == 0 {
        return Err(CoreError::degenerate("mean_rows", "no rows"));
    }
    let width = rows[0].len();
    let mut out = vec![0.0; width];
    for row in rows {
        if row.len() != width {
            return Err(CoreError::shape("mean_rows", width, row.len()));
        }
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    let inv = 1.0 / n as f64;
    for o in &mut out {
        *o *= inv;
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_vec(x: &[f64]) -> FeatureVec {
    let mut v = x.to_vec();
    softmax_in_place(&mut v);
    v
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(x: &[f64]) -> FeatureVec {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &v in x {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    x.iter().map(|&v| v - lse).collect()
}

/// Backward of row-wise softmax: `dx = y .* (upstream - <upstream, y>_row)`.
pub fn softmax_rows_backward(y: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if y.rows() != upstream.rows() || y.cols() != upstream.cols() {
        return Err(CoreError::shape(
            "softmax_rows_backward",
            format!("{}x{}", y.rows(), y.cols()),
            format!("{}x{}", upstream.rows(), upstream.cols()),
        ));
    }
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let ur = upstream.row(r);
        let inner = dot_unchecked(ur, yr);
        for c in 0..y.cols() {
            *out.at_mut(r, c) = yr[c] * (ur[c] - inner);
        }
    }
    Ok(out)
}

/// Per-slice normalization to zero mean, unit variance. The epsilon is small
/// enough that unit-variance output holds to 1e-6 for non-constant input.
pub fn layer_norm(x: &[f64]) -> FeatureVec {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-12).sqrt();
    x.iter().map(|&v| (v - mean) * inv).collect()
}

/// Gaussian error linear unit, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}
