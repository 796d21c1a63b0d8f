//! Augmented Dickey-Fuller unit-root test (constant, no trend).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// MacKinnon large-sample critical values for the constant-only regression.
pub const CRITICAL_1PCT: f64 = -3.43;
pub const CRITICAL_5PCT: f64 = -2.86;
pub const CRITICAL_10PCT: f64 = -2.57;

/// Schwert's rule `⌊12 · (t / 100)^{1/4}⌋`.
pub fn schwert_lag(len: usize) -> usize {
    (12.0 * (len as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Whether the statistic rejects the unit root at 5%.
pub fn rejects_unit_root(statistic: f64) -> bool {
    statistic < CRITICAL_5PCT
}

/// t-ratio of `γ` in `Δy_t = c + γ y_{t−1} + Σ_{i=1..lag} φ_i Δy_{t−i} + ε_t`.
pub fn adf_statistic(series: &[f64], lag_order: usize) -> Result<f64> {
    let n = series.len();
    let k = lag_order + 2;
    if n <= lag_order + 3 || n < lag_order + 1 + k + 1 {
        return Err(Error::invalid(format!(
            "series of length {n} is too short for an ADF regression with {lag_order} lags"
        )));
    }
    let diff: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    // rows t = lag+1 .. n-1 in series indexing; diff[t-1] = y_t - y_{t-1}
    let rows = n - 1 - lag_order;
    let mut x = DMatrix::zeros(rows, k);
    let mut y = DVector::zeros(rows);
    for r in 0..rows {
        let t = r + lag_order + 1;
        y[r] = diff[t - 1];
        x[(r, 0)] = 1.0;
        x[(r, 1)] = series[t - 1];
        for i in 1..=lag_order {
            x[(r, 1 + i)] = diff[t - 1 - i];
        }
    }

    let qr = x.clone().qr();
    let r_mat = qr.r();
    let max_diag = (0..k).map(|i| r_mat[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r_mat[(i, i)].abs() <= 1e-12 * max_diag.max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateRegression(
            "ADF design matrix is rank deficient (constant or collinear series)".into(),
        ));
    }
    let qty = qr.q().transpose() * &y;
    let beta = r_mat
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::DegenerateRegression("singular ADF system".into()))?;
    let residual = &y - &x * &beta;
    let rss = residual.norm_squared();
    let dof = (rows - k) as f64;
    let sigma2 = rss / dof;
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateRegression(
            "ADF regression has zero residual variance".into(),
        ));
    }
    let r_inv = r_mat
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::DegenerateRegression("singular ADF system".into()))?;
    // diag((RᵀR)⁻¹)_1 = ‖row 1 of R⁻¹‖²
    let var_gamma = sigma2 * r_inv.row(1).norm_squared();
    Ok(beta[1] / var_gamma.sqrt())
}
