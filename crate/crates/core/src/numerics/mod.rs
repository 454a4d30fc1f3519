//! Dense matrix and vector kernels shared by every other module.
//!
//! The [`Matrix`] type is a small row-major store with the handful of
//! operations this crate needs. Factorizations that benefit from a mature
//! implementation (symmetric eigendecomposition) delegate to `nalgebra`;
//! the Cholesky factorization is written out directly so the
//! positive-definiteness error semantics are exactly ours.
//!
//! All values are `f64`. Dimension mismatches in these low-level kernels are
//! programmer errors and panic; fallible numeric conditions (non-SPD inputs,
//! out-of-domain quantile levels) return [`crate::error::Error`].

pub mod special;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense real vector.
pub type Vector = Vec<f64>;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("matrix with zero rows".into()));
        }
        let n = rows.len();
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows in matrix literal".into()));
        }
        let data = rows.into_iter().flatten().collect();
        Ok(Matrix { rows: n, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vector {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimensions");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.get(k, j);
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vector {
        assert_eq!(self.cols, v.len(), "matvec dimensions");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Transposed product `self^T v` without materializing the transpose.
    pub fn tr_matvec(&self, v: &[f64]) -> Vector {
        assert_eq!(self.rows, v.len(), "tr_matvec dimensions");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.get(i, j) * vi;
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn add(&self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add dimensions");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub dimensions");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Symmetric within an absolute tolerance scaled by the largest entry.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.max_abs().max(1.0);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.get(i, j) - self.get(j, i)).abs() > rel_tol * scale {
                    return false;
                }
            }
        }
        true
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        assert!(self.is_square());
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    fn to_na(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_iterator(self.rows, self.cols, self.data.iter().copied())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot dimensions");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `y += c * x` in place.
pub fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    assert_eq!(y.len(), x.len(), "axpy dimensions");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

/// Lower-triangular Cholesky factor L with `a = L L^T`.
///
/// Errors with [`Error::NotPositiveDefinite`] when the input is not square,
/// not symmetric within 1e-10 (relative to the largest entry), or a pivot
/// is non-positive.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::NotPositiveDefinite(format!(
            "expected square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_symmetric(1e-10) {
        return Err(Error::NotPositiveDefinite("matrix is not symmetric".into()));
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k) * l.get(j, k);
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite(format!("pivot {diag:.3e} at index {j}")));
        }
        let ljj = diag.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut v = a.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v / ljj);
        }
    }
    Ok(l)
}

/// Solve `L L^T x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vector {
    let n = l.rows();
    assert_eq!(b.len(), n, "cholesky_solve dimensions");
    // Forward: L y = b.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l.get(i, k) * y[k];
        }
        y[i] = v / l.get(i, i);
    }
    // Backward: L^T x = y.
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in (i + 1)..n {
            v -= l.get(k, i) * x[k];
        }
        x[i] = v / l.get(i, i);
    }
    x
}

/// Inverse of a symmetric positive definite matrix via Cholesky solves.
pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    let l = cholesky(a)?;
    let n = a.rows();
    let mut inv = Matrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = cholesky_solve(&l, &e);
        for i in 0..n {
            inv.set(i, j, col[i]);
        }
    }
    // Symmetrize to wash out the independent-solve rounding.
    let inv_t = inv.transpose();
    Ok(inv.add(&inv_t).scale(0.5))
}

/// Log-determinant of an SPD matrix from its Cholesky factor.
pub fn spd_log_det(a: &Matrix) -> Result<f64> {
    let l = cholesky(a)?;
    Ok((0..l.rows()).map(|i| 2.0 * l.get(i, i).ln()).sum())
}

/// Eigendecomposition of a symmetric matrix: returns `(eigenvalues, q)`
/// with `a = q diag(eigenvalues) q^T`. Backed by `nalgebra`.
pub fn sym_eigen(a: &Matrix) -> Result<(Vector, Matrix)> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "symmetric eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_symmetric(1e-10) {
        return Err(Error::NotPositiveDefinite("matrix is not symmetric".into()));
    }
    let eig = nalgebra::SymmetricEigen::new(a.to_na());
    let n = a.rows();
    let vals: Vector = eig.eigenvalues.iter().copied().collect();
    let q = Matrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, j)]);
    Ok((vals, q))
}

/// Default ridge for covariance regularization: `1e-6 * trace(sigma) / d`.
pub fn default_ridge(sigma: &Matrix) -> f64 {
    1e-6 * sigma.trace() / sigma.rows() as f64
}

/// Symmetric inverse square root `(sigma + ridge I)^(-1/2)` through the
/// eigendecomposition `Q diag(1/sqrt(lambda)) Q^T`.
///
/// Errors with [`Error::NotPositiveDefinite`] when any ridged eigenvalue is
/// non-positive.
pub fn sym_inv_sqrt(sigma: &Matrix, ridge: f64) -> Result<Matrix> {
    Ok(sym_sqrt_pair(sigma, ridge)?.0)
}

/// Both symmetric factors of the ridged matrix: `(inverse sqrt, sqrt)`.
/// One eigendecomposition serves both so the pair is an exact inverse pair
/// up to rounding.
pub fn sym_sqrt_pair(sigma: &Matrix, ridge: f64) -> Result<(Matrix, Matrix)> {
    let n = sigma.rows();
    let mut ridged = sigma.clone();
    for i in 0..n {
        ridged.set(i, i, ridged.get(i, i) + ridge);
    }
    let (vals, q) = sym_eigen(&ridged)?;
    if let Some(bad) = vals.iter().find(|v| **v <= 0.0 || !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!(
            "eigenvalue {bad:.3e} after ridge {ridge:.3e}"
        )));
    }
    let qt = q.transpose();
    let inv_sqrt = q.matmul(&Matrix::diagonal(&vals.iter().map(|v| 1.0 / v.sqrt()).collect::<Vec<_>>())).matmul(&qt);
    let sqrt = q.matmul(&Matrix::diagonal(&vals.iter().map(|v| v.sqrt()).collect::<Vec<_>>())).matmul(&qt);
    // Symmetrize: the product chain loses exact symmetry in the last bits.
    let inv_sqrt = inv_sqrt.add(&inv_sqrt.transpose()).scale(0.5);
    let sqrt = sqrt.add(&sqrt.transpose()).scale(0.5);
    Ok((inv_sqrt, sqrt))
}
