//! Dense rank-2 arrays and the handful of numerical kernels the engine needs.
//!
//! Everything is `f64` and row-major. Every constructor rejects non-finite
//! entries, so a [`Matrix`] that exists is always finite.

use crate::error::{dim_err, domain_err, Error, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Tolerance used when checking that an input is a probability distribution.
pub const DIST_TOL: f64 = 1e-6;

/// Dense row-major matrix. Vectors are `1 x n` or handled as plain slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "data length {} does not match shape {rows}x{cols}",
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("entry {pos} of {rows}x{cols} array")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return dim_err("ragged rows");
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Builds from rows that are already known to be finite (internal kernels).
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero; an empty matrix has no rows to yield anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Stacks the selected rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::from_raw(idx.len(), self.cols, data)
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self::from_raw(self.cols, self.rows, out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return dim_err(format!(
            "matmul inner extents differ: {}x{} · {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = vec![0.0; a.rows * b.cols];
    for i in 0..a.rows {
        let out_row = &mut out[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    finite_or_err(Matrix::from_raw(a.rows, b.cols, out), "matmul")
}

/// Row-wise softmax over the last axis, stabilised by max subtraction.
pub fn softmax(logits: &Matrix) -> Result<Matrix> {
    if logits.cols == 0 {
        return dim_err("softmax over empty rows");
    }
    let mut out = Vec::with_capacity(logits.data.len());
    for row in logits.row_iter() {
        out.extend(softmax_row(row));
    }
    Ok(Matrix::from_raw(logits.rows, logits.cols, out))
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Checks that `p` is a probability vector within [`DIST_TOL`].
pub fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return dim_err("empty distribution");
    }
    if p.iter().any(|v| !v.is_finite() || *v < -DIST_TOL) {
        return domain_err("distribution has negative or non-finite entries");
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL {
        return domain_err(format!("distribution sums to {sum}, expected 1"));
    }
    Ok(())
}

/// Clamps each entry to `[PROB_EPS, 1]` and renormalises.
pub fn clamp_renormalize(p: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = p.iter().map(|v| v.clamp(PROB_EPS, 1.0)).collect();
    let sum: f64 = clamped.iter().sum();
    clamped.into_iter().map(|v| v / sum).collect()
}

/// Kullback-Leibler divergence `KL(p || q)` in nats.
///
/// Both arguments are clamped to `[PROB_EPS, 1]` and renormalised first, so
/// zero entries never produce infinities.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return dim_err(format!("kl_div length mismatch: {} vs {}", p.len(), q.len()));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let p = clamp_renormalize(p);
    let q = clamp_renormalize(q);
    Ok(p.iter()
        .zip(&q)
        .map(|(&pj, &qj)| pj * (pj / qj).ln())
        .sum())
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return dim_err(format!("l2_distance length mismatch: {} vs {}", a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// `1 - cos(a, b)`; zero vectors are treated as maximally dissimilar to
/// everything except another zero vector.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return dim_err(format!("cosine_distance length mismatch: {} vs {}", a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(if na == nb { 0.0 } else { 1.0 });
    }
    Ok(1.0 - dot / (na * nb))
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt())
}

fn finite_or_err(m: Matrix, op: &str) -> Result<Matrix> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::NonFinite(format!("{op} produced a non-finite entry")))
    }
}
