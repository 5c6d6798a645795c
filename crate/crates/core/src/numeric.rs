//! Dense numeric primitives: row-major matrices, hypersphere helpers and a
//! finite-difference gradient checker shared by every loss test.
//!
//! Everything here is `f64`. Correctness tests rely on central-difference
//! tolerances that single precision cannot reach.

use crate::error::{Error, Result};

/// Norms below this are treated as zero vectors.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

/// Cosines are pulled this far inside [-1, 1] before any `acos`, whose
/// derivative diverges at the endpoints.
pub const COSINE_CLAMP: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Domain(format!(
                "matrix storage length {} does not match shape {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("matrix element".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `self (r x c) * other^T (k x c) -> r x k`, i.e. pairwise row dot products.
    pub fn mul_transpose(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Domain(format!(
                "inner dimensions differ: {} vs {}",
                self.cols, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.set(i, j, dot(a, other.row(j)));
            }
        }
        Ok(out)
    }
}

/// An L2-normalized vector; construction enforces the unit-norm invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps a vector already on the sphere. Fails if the norm is off by
    /// more than 1e-6.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvariantViolation(format!(
                "expected unit norm, got {n}"
            )));
        }
        Ok(UnitVector(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` onto the unit sphere.
pub fn l2_normalize(v: &[f64]) -> Result<UnitVector> {
    let n = norm(v);
    if !n.is_finite() {
        return Err(Error::NonFinite("norm".into()));
    }
    if n <= ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroVector);
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// Cosine similarity, clamped to [-1, 1] to guard `acos` downstream.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Domain(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu <= ZERO_NORM_THRESHOLD || nv <= ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroVector);
    }
    let c = dot(u, v) / (nu * nv);
    if !c.is_finite() {
        return Err(Error::NonFinite("cosine".into()));
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// Clamps a cosine strictly inside (-1, 1) so `acos` stays differentiable.
pub fn clamp_cosine(c: f64) -> f64 {
    c.clamp(-1.0 + COSINE_CLAMP, 1.0 - COSINE_CLAMP)
}

/// Compares an analytic gradient against central differences.
///
/// Returns the max over coordinates of `|a - n| / max(1, |a|, |n|)` where
/// `n = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn grad_check<F>(mut f: F, x: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Domain(format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    if x.len() != analytic.len() {
        return Err(Error::Domain(format!(
            "gradient length {} does not match point length {}",
            analytic.len(),
            x.len()
        )));
    }
    let mut point = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let plus = f(&point);
        point[i] = orig - eps;
        let minus = f(&point);
        point[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("f(x +/- eps) at coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        if !a.is_finite() {
            return Err(Error::NonFinite(format!("analytic gradient at {i}")));
        }
        let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}
