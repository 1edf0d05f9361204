use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Result};
use crate::hankel::{svd, RankTolerance};

/// Pseudo-inverse factors of a matrix, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pinv: DMatrix<f64>,
    pub rank: usize,
}

impl PseudoInverse {
    pub fn new(a: &DMatrix<f64>, tol: &RankTolerance) -> Result<Self> {
        let (rows, cols) = a.shape();
        if rows == 0 || cols == 0 {
            return Ok(Self { pinv: DMatrix::zeros(cols, rows), rank: 0 });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(contract("least squares on a non-finite matrix"));
        }
        let svd = svd(a, true, true)?;
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let threshold = tol.threshold(rows, cols, sigma_max);
        let mut pinv = DMatrix::zeros(cols, rows);
        let mut rank = 0;
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > threshold {
                rank += 1;
                pinv += (v_t.row(k).transpose() / s) * u.column(k).transpose();
            }
        }
        Ok(Self { pinv, rank })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.pinv * b
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.pinv
    }
}

/// Minimum 2-norm minimizer of `‖A x − b‖₂`.
pub fn least_squares_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, tol: &RankTolerance) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(contract(format!("A has {} rows but b has {} entries", a.nrows(), b.len())));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(contract("least squares with a non-finite right-hand side"));
    }
    Ok(PseudoInverse::new(a, tol)?.solve(b))
}
