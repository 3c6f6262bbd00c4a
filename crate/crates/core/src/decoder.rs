//! Closed-form ridge decoding from features to block pixels, the decoder
//! gain used by the shot-noise bound, and the block-capacity calculators.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{QfanError, Result};

/// Default ridge strength on unit-scaled intensities.
pub const DEFAULT_ALPHA: f64 = 1e-3;

/// Default feature-to-target threshold of the capacity heuristic.
pub const DEFAULT_RHO_MIN: f64 = 1.5;

/// Per-block decoder `W` (`p_f x b`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeWeights {
    pub w: DMatrix<f64>,
    pub alpha: f64,
    pub block: usize,
}

impl RidgeWeights {
    pub fn features(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    /// Decode one feature row.
    pub fn decode(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.w.nrows() {
            return Err(QfanError::mismatch("decoder input", self.w.nrows(), f.len()));
        }
        Ok((0..self.w.ncols())
            .map(|j| f.iter().enumerate().map(|(l, x)| x * self.w[(l, j)]).sum())
            .collect())
    }

    pub fn gain(&self) -> f64 {
        decoder_gain(&self.w)
    }
}

/// Solve `(F^T F + alpha I) W = F^T Y` through a Cholesky factorization.
pub fn fit_ridge(f: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(QfanError::InvalidRegularization(alpha));
    }
    if f.nrows() == 0 {
        return Err(QfanError::InsufficientData("ridge fit needs at least one row".into()));
    }
    if f.nrows() != y.nrows() {
        return Err(QfanError::mismatch("ridge rows", f.nrows(), y.nrows()));
    }
    let p = f.ncols();
    let mut gram = f.tr_mul(f);
    for i in 0..p {
        gram[(i, i)] += alpha;
    }
    let rhs = f.tr_mul(y);
    let chol = gram
        .cholesky()
        .ok_or_else(|| QfanError::Numerical("ridge normal matrix not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// `F W`.
pub fn predict(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if f.ncols() != w.nrows() {
        return Err(QfanError::mismatch("prediction features", w.nrows(), f.ncols()));
    }
    Ok(f * w)
}

/// Largest absolute column sum, `max_j sum_l |W_lj|`.
pub fn decoder_gain(w: &DMatrix<f64>) -> f64 {
    w.column_iter()
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Frobenius-norm bound of a ridge fit against its `||Y||_F / (2 sqrt(alpha))` cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn weight_norm_bound_check(f: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64) -> Result<WeightBound> {
    let w = fit_ridge(f, y, alpha)?;
    let lhs = w.norm();
    let rhs = y.norm() / (2.0 * alpha.sqrt());
    // Tiny slack for rounding when the bound is attained.
    Ok(WeightBound {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-12) + 1e-300,
    })
}

/// Feature-to-target ratio `rho = (n_q^2 + n_q) / b`.
pub fn capacity_ratio(n_qubits: usize, block_size: usize) -> f64 {
    crate::quantum::feature_count(n_qubits) as f64 / block_size as f64
}

/// Largest block size with `rho >= rho_min`: `floor(p_f / rho_min)`.
pub fn b_max(n_qubits: usize, rho_min: f64) -> usize {
    let p_f = crate::quantum::feature_count(n_qubits) as f64;
    // Guard against 11.999999 style rounding in the quotient.
    (p_f / rho_min + 1e-9).floor() as usize
}

/// Smallest block count keeping `rho >= rho_min`: `ceil(d rho_min / p_f)`.
pub fn b_min(d: usize, n_qubits: usize, rho_min: f64) -> usize {
    let p_f = crate::quantum::feature_count(n_qubits) as f64;
    (d as f64 * rho_min / p_f - 1e-9).ceil() as usize
}
