//! Small dense helpers shared across modules.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Numerical rank: singular values above `rel_tol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub(crate) fn check_shape(m: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "{what}: expected {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}
