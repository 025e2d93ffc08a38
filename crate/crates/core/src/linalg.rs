//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{DcsError, Result};

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Average `m` with its transpose.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `V diag(f(λ)) V'` for a symmetric matrix.
pub fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mapped = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| f(l)));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&mapped) * v.transpose()))
}

/// Symmetric square root of a PSD matrix (negative eigenvalues floored at 0).
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| l.max(0.0).sqrt())
}

/// Rescale a positive-diagonal matrix to unit diagonal.
pub fn cov_to_corr(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let d: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    if let Some(i) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(DcsError::numeric(format!(
            "non-positive diagonal entry {} at index {i}",
            d[i]
        )));
    }
    let inv: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut out = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * (inv[i] * inv[j]));
    for i in 0..n {
        out[(i, i)] = 1.0;
    }
    Ok(out)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| DcsError::numeric("matrix is not positive definite"))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Pearson correlation matrix of the columns of a T×p panel.
pub fn sample_correlation(panel: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (t, p) = panel.shape();
    if t < 2 {
        return Err(DcsError::input("need at least two rows for a correlation"));
    }
    let means: Vec<f64> = (0..p).map(|j| panel.column(j).mean()).collect();
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let s: f64 = (0..t)
                .map(|r| (panel[(r, i)] - means[i]) * (panel[(r, j)] - means[j]))
                .sum();
            cov[(i, j)] = s / t as f64;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov_to_corr(&cov).map_err(|_| DcsError::input("constant column: correlation undefined"))
}

pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}
