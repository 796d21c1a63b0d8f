//! Elastic-net linear regression by cyclic coordinate descent, with
//! strong-rule screening along a path and an active-set refinement step.
//!
//! The objective is `(1/2N)‖y − Xβ‖² + λ Σ_j pf_j (α|β_j| + (1−α)/2 β_j²)`
//! on a standardized design (columns with mean 0 and population standard
//! deviation 1, centered response), where `pf_j` is 1 for penalized columns
//! and 0 otherwise.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag written into serialized models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Largest KKT residual accepted for a returned fit.
pub const KKT_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_N_LAMBDAS: usize = 100;
pub const DEFAULT_LAMBDA_RATIO: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_MAX_PASSES: usize = 100_000;

/// Subjects in rows, named columns, and the response.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    columns: Vec<String>,
    response: Vec<f64>,
    penalized: Vec<bool>,
}

impl DesignMatrix {
    /// All columns penalized.
    pub fn new(x: DMatrix<f64>, columns: Vec<String>, response: Vec<f64>) -> Result<Self> {
        let p = columns.len();
        Self::with_penalties(x, columns, response, vec![true; p])
    }

    pub fn with_penalties(
        x: DMatrix<f64>,
        columns: Vec<String>,
        response: Vec<f64>,
        penalized: Vec<bool>,
    ) -> Result<Self> {
        if x.nrows() < 3 {
            return Err(Error::invalid(format!("design needs at least 3 rows, got {}", x.nrows())));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid("design has no columns"));
        }
        if columns.len() != x.ncols() {
            return Err(Error::DimensionMismatch { expected: x.ncols(), got: columns.len() });
        }
        if penalized.len() != x.ncols() {
            return Err(Error::DimensionMismatch { expected: x.ncols(), got: penalized.len() });
        }
        if response.len() != x.nrows() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: response.len() });
        }
        let unique: BTreeSet<&str> = columns.iter().map(String::as_str).collect();
        if unique.len() != columns.len() {
            return Err(Error::invalid("column names must be unique"));
        }
        if x.iter().chain(&response).any(|v| !v.is_finite()) {
            return Err(Error::invalid("design contains non-finite values"));
        }
        Ok(DesignMatrix { x, columns, response, penalized })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn penalized(&self) -> &[bool] {
        &self.penalized
    }
}

/// Training-set location and scale of every retained column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    /// Columns of the raw design, in input order (retained and dropped).
    pub input_columns: Vec<String>,
    /// Retained columns, in input order.
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
    pub response_mean: f64,
    /// Constant columns removed before fitting.
    pub dropped: Vec<String>,
}

impl StandardizationParams {
    /// Standardizes new rows given under `columns` with the training-set
    /// parameters, returning the retained columns in training order.
    pub fn apply(&self, rows: &DMatrix<f64>, columns: &[String]) -> Result<DMatrix<f64>> {
        if rows.ncols() != columns.len() {
            return Err(Error::DimensionMismatch { expected: columns.len(), got: rows.ncols() });
        }
        let given: BTreeSet<&str> = columns.iter().map(String::as_str).collect();
        let expected: BTreeSet<&str> = self.input_columns.iter().map(String::as_str).collect();
        if given != expected || given.len() != columns.len() {
            return Err(Error::ColumnMismatch {
                missing: expected.difference(&given).map(|s| s.to_string()).collect(),
                unexpected: given.difference(&expected).map(|s| s.to_string()).collect(),
            });
        }
        let position: HashMap<&str, usize> =
            columns.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut out = DMatrix::zeros(rows.nrows(), self.columns.len());
        for (k, name) in self.columns.iter().enumerate() {
            let src = position[name.as_str()];
            for i in 0..rows.nrows() {
                out[(i, k)] = (rows[(i, src)] - self.means[k]) / self.std_devs[k];
            }
        }
        Ok(out)
    }
}

fn column_mean_sd(col: &[f64]) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Centers and scales every non-constant column to population standard
/// deviation 1 and centers the response. Constant columns are dropped.
pub fn standardize(d: &DesignMatrix) -> Result<(DesignMatrix, StandardizationParams)> {
    let n = d.n_rows();
    let mut keep = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..d.n_cols() {
        let col = d.x.column(j);
        let col = col.as_slice();
        let (mean, sd) = column_mean_sd(col);
        let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if sd == 0.0 || sd <= 1e-12 * scale {
            dropped.push(d.columns[j].clone());
        } else {
            keep.push(j);
            means.push(mean);
            sds.push(sd);
        }
    }
    if keep.is_empty() {
        return Err(Error::DegenerateRegression("every design column is constant".into()));
    }
    let mut x = DMatrix::zeros(n, keep.len());
    for (k, &j) in keep.iter().enumerate() {
        for i in 0..n {
            x[(i, k)] = (d.x[(i, j)] - means[k]) / sds[k];
        }
    }
    let response_mean = d.response.iter().sum::<f64>() / n as f64;
    let response = d.response.iter().map(|v| v - response_mean).collect();
    let columns: Vec<String> = keep.iter().map(|&j| d.columns[j].clone()).collect();
    let penalized = keep.iter().map(|&j| d.penalized[j]).collect();
    let params = StandardizationParams {
        input_columns: d.columns.clone(),
        columns: columns.clone(),
        means,
        std_devs: sds,
        response_mean,
        dropped,
    };
    Ok((DesignMatrix { x, columns, response, penalized }, params))
}

/// Solution of one elastic-net problem on a standardized design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetFit {
    /// Shared by every fit of one path.
    pub columns: Arc<[String]>,
    /// Coefficients on the standardized scale.
    pub coefficients: Vec<f64>,
    /// Intercept on the standardized (centered) scale.
    pub intercept: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub passes: usize,
    pub max_delta: f64,
}

impl ElasticNetFit {
    /// Names of the columns with a nonzero coefficient.
    pub fn active_set(&self) -> Vec<String> {
        self.columns
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, b)| **b != 0.0)
            .map(|(c, _)| c.clone())
            .collect()
    }

    /// `(coefficients, intercept)` on the scale of the raw design.
    pub fn original_scale(&self, params: &StandardizationParams) -> Result<(Vec<f64>, f64)> {
        if params.columns[..] != self.columns[..] {
            return Err(Error::invalid("standardization parameters do not belong to this fit"));
        }
        let coef: Vec<f64> = self
            .coefficients
            .iter()
            .zip(&params.std_devs)
            .map(|(b, s)| b / s)
            .collect();
        let shift: f64 = coef.iter().zip(&params.means).map(|(c, m)| c * m).sum();
        Ok((coef, params.response_mean + self.intercept - shift))
    }
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn validate_penalty(lambda: f64, alpha: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

fn check_standardized(d: &DesignMatrix) -> Result<()> {
    let n = d.n_rows() as f64;
    for j in 0..d.n_cols() {
        let col = d.x.column(j);
        let scale = col.amax().max(1.0);
        if (col.sum() / n).abs() > 1e-8 * scale {
            return Err(Error::invalid(format!("column '{}' is not centered", d.columns[j])));
        }
    }
    let y_scale = d.response.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if (d.response.iter().sum::<f64>() / n).abs() > 1e-8 * y_scale {
        return Err(Error::invalid("response is not centered"));
    }
    Ok(())
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: DVector<f64>,
    n: f64,
    col_sq: Vec<f64>,
    pf: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(d: &'a DesignMatrix) -> Self {
        let n = d.n_rows() as f64;
        Problem {
            x: &d.x,
            y: DVector::from_column_slice(&d.response),
            n,
            col_sq: (0..d.n_cols()).map(|j| d.x.column(j).norm_squared() / n).collect(),
            pf: d.penalized.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect(),
        }
    }

    fn residual(&self, beta: &[f64]) -> DVector<f64> {
        &self.y - self.x * DVector::from_column_slice(beta)
    }

    fn objective(&self, r: &DVector<f64>, beta: &[f64], lambda: f64, alpha: f64) -> f64 {
        let penalty: f64 = beta
            .iter()
            .zip(&self.pf)
            .map(|(b, pf)| pf * (alpha * b.abs() + 0.5 * (1.0 - alpha) * b * b))
            .sum();
        r.norm_squared() / (2.0 * self.n) + lambda * penalty
    }

    fn gradient(&self, j: usize, r: &DVector<f64>) -> f64 {
        self.x.column(j).dot(r) / self.n
    }

    /// Stationarity residual of coordinate `j` given its gradient `g`.
    fn kkt_at(&self, j: usize, g: f64, b: f64, lambda: f64, alpha: f64) -> f64 {
        let pen = lambda * self.pf[j];
        if b != 0.0 {
            (g - pen * ((1.0 - alpha) * b + alpha * b.signum())).abs()
        } else {
            (g.abs() - pen * alpha).max(0.0)
        }
    }

    fn kkt(&self, coords: &[usize], r: &DVector<f64>, beta: &[f64], lambda: f64, alpha: f64) -> f64 {
        coords
            .iter()
            .map(|&j| self.kkt_at(j, self.gradient(j, r), beta[j], lambda, alpha))
            .fold(0.0, f64::max)
    }

    /// Active-set refinement on the current support, where the objective is
    /// a smooth quadratic. Moves toward the minimizer of that quadratic; a
    /// coordinate that would change sign stops the move at zero and leaves
    /// the support, and the rest is re-solved. Returns whether it moved.
    fn polish(&self, active: &[usize], beta: &mut [f64], r: &mut DVector<f64>, lambda: f64, alpha: f64) -> bool {
        if active.is_empty() {
            return false;
        }
        let xa = self.x.select_columns(active);
        let gram = xa.tr_mul(&xa) / self.n;
        let xty = xa.tr_mul(&self.y) / self.n;
        let mut b = DVector::from_iterator(active.len(), active.iter().map(|&j| beta[j]));
        let mut h = gram;
        let mut rhs = xty;
        for (a, &j) in active.iter().enumerate() {
            let pen = lambda * self.pf[j];
            h[(a, a)] += pen * (1.0 - alpha);
            rhs[a] -= pen * alpha * b[a].signum();
        }
        let Some(mut chol) = h.cholesky() else {
            return false;
        };
        // support[u] is the position in `active` of row u of the factor
        let mut support: Vec<usize> = (0..active.len()).collect();
        let mut moved = false;
        while !support.is_empty() {
            let sol = chol.solve(&rhs);
            if sol.iter().any(|v| !v.is_finite()) {
                break;
            }
            // largest step keeping every l1-penalized sign
            let mut step = 1.0f64;
            for (u, &a) in support.iter().enumerate() {
                if self.pf[active[a]] * alpha > 0.0 && sol[u].signum() != b[a].signum() {
                    step = step.min(b[a] / (b[a] - sol[u]));
                }
            }
            for (u, &a) in support.iter().enumerate() {
                let next = b[a] + step * (sol[u] - b[a]);
                b[a] = if self.pf[active[a]] * alpha > 0.0 && (next == 0.0 || next.signum() != b[a].signum()) {
                    0.0
                } else {
                    next
                };
            }
            moved = true;
            if step >= 1.0 {
                break;
            }
            let mut leaving: Vec<usize> = (0..support.len()).filter(|&u| b[support[u]] == 0.0).collect();
            if leaving.is_empty() {
                // the blocking coordinate landed a rounding error away from zero
                let u = (0..support.len())
                    .min_by(|&x, &y| b[support[x]].abs().total_cmp(&b[support[y]].abs()))
                    .expect("support is non-empty");
                b[support[u]] = 0.0;
                leaving.push(u);
            }
            for &u in leaving.iter().rev() {
                chol = chol.remove_column(u);
                rhs = rhs.remove_row(u);
                support.remove(u);
            }
        }
        if !moved {
            return false;
        }
        let mut trial = beta.to_vec();
        for (a, &j) in active.iter().enumerate() {
            trial[j] = b[a];
        }
        let trial_r = &self.y - &xa * &b;
        if self.objective(&trial_r, &trial, lambda, alpha) > self.objective(r, beta, lambda, alpha) {
            return false;
        }
        beta.copy_from_slice(&trial);
        *r = trial_r;
        true
    }

    /// One cyclic sweep over `coords`; returns the largest coefficient change.
    fn sweep(&self, coords: &[usize], beta: &mut [f64], r: &mut DVector<f64>, lambda: f64, alpha: f64) -> f64 {
        let mut max_delta = 0.0f64;
        for &j in coords {
            let c = self.col_sq[j];
            if c == 0.0 {
                continue;
            }
            let xj = self.x.column(j);
            let old = beta[j];
            let rho = xj.dot(r) / self.n + c * old;
            let pen = lambda * self.pf[j];
            let new = soft_threshold(rho, pen * alpha) / (c + pen * (1.0 - alpha));
            if new != old {
                r.axpy(old - new, &xj, 1.0);
                beta[j] = new;
                max_delta = max_delta.max((new - old).abs());
            }
        }
        max_delta
    }
}

fn validate_solver(tol: f64, max_passes: usize) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if max_passes == 0 {
        return Err(Error::invalid("max_passes must be positive"));
    }
    Ok(())
}

/// Solves one λ in place on `beta` and its residual `r`.
///
/// Coordinates outside `working` stay at zero until a full KKT check finds
/// them violated, at which point they join and the working set is re-solved.
/// Returns the pass count and the last sweep's largest change.
#[allow(clippy::too_many_arguments)]
fn coordinate_descent(
    prob: &Problem,
    lambda: f64,
    alpha: f64,
    tol: f64,
    max_passes: usize,
    beta: &mut [f64],
    r: &mut DVector<f64>,
    working: &mut [bool],
) -> Result<(usize, f64)> {
    validate_penalty(lambda, alpha)?;
    let p = beta.len();
    let mut passes = 0usize;
    let mut max_delta;
    let mut tol_eff = tol;
    let mut previous = if cfg!(debug_assertions) { prob.objective(r, beta, lambda, alpha) } else { 0.0 };

    let mut check_descent = |r: &DVector<f64>, beta: &[f64]| {
        if cfg!(debug_assertions) {
            let current = prob.objective(r, beta, lambda, alpha);
            debug_assert!(
                current <= previous + 1e-9 * previous.abs() + 1e-15,
                "objective increased from {previous} to {current}"
            );
            previous = current;
        }
    };

    loop {
        let ws: Vec<usize> = (0..p).filter(|&j| working[j]).collect();
        loop {
            max_delta = prob.sweep(&ws, beta, r, lambda, alpha);
            passes += 1;
            check_descent(r, beta);
            if max_delta < tol_eff {
                // a full sweep with negligible movement; confirm optimality
                if prob.kkt(&ws, r, beta, lambda, alpha) <= KKT_TOLERANCE || tol_eff < 1e-15 {
                    break;
                }
                tol_eff *= 0.1;
            }
            if passes >= max_passes {
                return Err(Error::ElasticNetNotConverged { passes, max_delta });
            }
            let active: Vec<usize> = ws.iter().copied().filter(|&j| beta[j] != 0.0).collect();
            if prob.polish(&active, beta, r, lambda, alpha) {
                check_descent(r, beta);
                continue;
            }
            loop {
                let delta = prob.sweep(&active, beta, r, lambda, alpha);
                passes += 1;
                check_descent(r, beta);
                if delta < tol_eff {
                    break;
                }
                if passes >= max_passes {
                    return Err(Error::ElasticNetNotConverged { passes, max_delta: delta });
                }
            }
        }
        let mut grew = false;
        for (j, w) in working.iter_mut().enumerate() {
            if !*w && prob.kkt_at(j, prob.gradient(j, r), 0.0, lambda, alpha) > KKT_TOLERANCE {
                *w = true;
                grew = true;
            }
        }
        if !grew {
            return Ok((passes, max_delta));
        }
    }
}

fn make_fit(columns: &Arc<[String]>, beta: &[f64], lambda: f64, alpha: f64, (passes, max_delta): (usize, f64)) -> ElasticNetFit {
    ElasticNetFit {
        columns: Arc::clone(columns),
        coefficients: beta.to_vec(),
        intercept: 0.0,
        lambda,
        alpha,
        passes,
        max_delta,
    }
}

/// Minimizes the elastic-net objective on a standardized design.
pub fn fit_elastic_net(d: &DesignMatrix, lambda: f64, alpha: f64, tol: f64, max_passes: usize) -> Result<ElasticNetFit> {
    check_standardized(d)?;
    validate_solver(tol, max_passes)?;
    let prob = Problem::new(d);
    let mut beta = vec![0.0; d.n_cols()];
    let mut r = prob.residual(&beta);
    let mut working = vec![true; d.n_cols()];
    let stats = coordinate_descent(&prob, lambda, alpha, tol, max_passes, &mut beta, &mut r, &mut working)?;
    Ok(make_fit(&Arc::from(d.columns.as_slice()), &beta, lambda, alpha, stats))
}

/// Fits every λ of a (descending) path, each warm-started from the previous
/// solution. Each step first screens columns with the sequential strong
/// rule `|∇_j| ≥ α(2λ_k − λ_{k−1})`; the final KKT check covers all columns.
pub fn fit_path(d: &DesignMatrix, lambdas: &[f64], alpha: f64, tol: f64, max_passes: usize) -> Result<Vec<ElasticNetFit>> {
    check_standardized(d)?;
    validate_solver(tol, max_passes)?;
    let p = d.n_cols();
    let prob = Problem::new(d);
    let mut beta = vec![0.0; p];
    let mut r = prob.residual(&beta);
    let columns: Arc<[String]> = Arc::from(d.columns.as_slice());
    let mut fits: Vec<ElasticNetFit> = Vec::with_capacity(lambdas.len());
    let mut previous: Option<f64> = None;
    for &lambda in lambdas {
        let mut working: Vec<bool> = match previous {
            Some(prev) if prev >= lambda => {
                let cut = alpha * (2.0 * lambda - prev);
                (0..p)
                    .map(|j| prob.pf[j] == 0.0 || beta[j] != 0.0 || prob.gradient(j, &r).abs() >= cut)
                    .collect()
            }
            _ => vec![true; p],
        };
        let stats = coordinate_descent(&prob, lambda, alpha, tol, max_passes, &mut beta, &mut r, &mut working)?;
        fits.push(make_fit(&columns, &beta, lambda, alpha, stats));
        previous = Some(lambda);
    }
    Ok(fits)
}

/// Residual of the least-squares fit on the unpenalized columns alone.
fn unpenalized_residual(d: &DesignMatrix) -> DVector<f64> {
    let y = DVector::from_column_slice(&d.response);
    let free: Vec<usize> = (0..d.n_cols()).filter(|&j| !d.penalized[j]).collect();
    if free.is_empty() {
        return y;
    }
    let xf = d.x.select_columns(&free);
    match xf.clone().svd(true, true).solve(&y, 1e-12) {
        Ok(coef) => &y - xf * coef,
        Err(_) => y,
    }
}

/// Smallest λ at which every penalized coefficient is zero.
pub fn lambda_max(d: &DesignMatrix, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!(
            "lambda path needs alpha in (0, 1], got {alpha}; a ridge-only path has no finite λ_max"
        )));
    }
    let r = unpenalized_residual(d);
    let n = d.n_rows() as f64;
    Ok((0..d.n_cols())
        .filter(|&j| d.penalized[j])
        .map(|j| d.x.column(j).dot(&r).abs())
        .fold(0.0, f64::max)
        / (n * alpha))
}

/// Descending geometric grid from `λ_max` to `λ_max · ratio`.
pub fn lambda_path(d: &DesignMatrix, alpha: f64, n_lambdas: usize, ratio: f64) -> Result<Vec<f64>> {
    if n_lambdas == 0 {
        return Err(Error::invalid("n_lambdas must be positive"));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("ratio must lie in (0, 1], got {ratio}")));
    }
    let top = lambda_max(d, alpha)?;
    if n_lambdas == 1 {
        return Ok(vec![top]);
    }
    let last = (n_lambdas - 1) as f64;
    Ok((0..n_lambdas)
        .map(|k| if k == 0 { top } else { top * ratio.powf(k as f64 / last) })
        .collect())
}

/// Largest KKT residual of `fit` on the standardized design it was fitted to.
pub fn kkt_violation(d: &DesignMatrix, fit: &ElasticNetFit) -> Result<f64> {
    if fit.coefficients.len() != d.n_cols() {
        return Err(Error::DimensionMismatch { expected: d.n_cols(), got: fit.coefficients.len() });
    }
    let prob = Problem::new(d);
    let r = prob.residual(&fit.coefficients);
    let all: Vec<usize> = (0..d.n_cols()).collect();
    Ok(prob.kkt(&all, &r, &fit.coefficients, fit.lambda, fit.alpha))
}

/// Predictions for raw rows given under `columns`, standardized with the
/// training-set parameters.
pub fn predict(fit: &ElasticNetFit, params: &StandardizationParams, rows: &DMatrix<f64>, columns: &[String]) -> Result<Vec<f64>> {
    Ok(predict_path(std::slice::from_ref(fit), params, rows, columns)?.remove(0))
}

/// [`predict`] for every fit of a path sharing one standardization; the rows
/// are standardized once.
pub fn predict_path(
    fits: &[ElasticNetFit],
    params: &StandardizationParams,
    rows: &DMatrix<f64>,
    columns: &[String],
) -> Result<Vec<Vec<f64>>> {
    let Some(first) = fits.first() else {
        return Ok(Vec::new());
    };
    let foreign = |f: &ElasticNetFit| !Arc::ptr_eq(&f.columns, &first.columns) && f.columns[..] != first.columns[..];
    if params.columns[..] != first.columns[..] || fits.iter().any(foreign) {
        return Err(Error::invalid("standardization parameters do not belong to this fit"));
    }
    let z = params.apply(rows, columns)?;
    let betas = DMatrix::from_fn(first.columns.len(), fits.len(), |j, k| fits[k].coefficients[j]);
    let out = z * betas;
    Ok(fits
        .iter()
        .enumerate()
        .map(|(k, fit)| {
            let base = params.response_mean + fit.intercept;
            out.column(k).iter().map(|v| base + v).collect()
        })
        .collect())
}

/// Convergence diagnostics stored with a serialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub passes: usize,
    pub max_delta: f64,
}

/// A fit together with its standardization, on the raw scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetModel {
    pub format_version: u32,
    pub columns: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub active_set: Vec<String>,
    pub diagnostics: Diagnostics,
    pub standardized_coefficients: Vec<f64>,
    pub standardization: StandardizationParams,
}

impl ElasticNetModel {
    pub fn new(fit: &ElasticNetFit, params: &StandardizationParams) -> Result<Self> {
        let (coefficients, intercept) = fit.original_scale(params)?;
        Ok(ElasticNetModel {
            format_version: MODEL_FORMAT_VERSION,
            columns: fit.columns.to_vec(),
            coefficients,
            intercept,
            lambda: fit.lambda,
            alpha: fit.alpha,
            active_set: fit.active_set(),
            diagnostics: Diagnostics { passes: fit.passes, max_delta: fit.max_delta },
            standardized_coefficients: fit.coefficients.clone(),
            standardization: params.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ElasticNetModel = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn predict(&self, rows: &DMatrix<f64>, columns: &[String]) -> Result<Vec<f64>> {
        let z = self.standardization.apply(rows, columns)?;
        let beta = DVector::from_column_slice(&self.standardized_coefficients);
        let base = self.intercept
            + self
                .coefficients
                .iter()
                .zip(&self.standardization.means)
                .map(|(c, m)| c * m)
                .sum::<f64>();
        Ok((z * beta).iter().map(|v| base + v).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("f{j}")).collect()
    }

    fn random_design(seed: u64, n: usize, p: usize) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let truth: Vec<f64> = (0..p).map(|j| if j % 3 == 0 { 1.5 } else { 0.0 }).collect();
        let y = (0..n)
            .map(|i| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                2.0 + (0..p).map(|j| x[(i, j)] * truth[j]).sum::<f64>() + 0.5 * noise
            })
            .collect();
        DesignMatrix::new(x, names(p), y).unwrap()
    }

    /// Least squares with intercept on raw columns via QR.
    fn ols_fitted(d: &DesignMatrix) -> Vec<f64> {
        let n = d.n_rows();
        let mut a = DMatrix::from_element(n, d.n_cols() + 1, 1.0);
        a.view_mut((0, 1), (n, d.n_cols())).copy_from(d.x());
        let y = DVector::from_column_slice(d.response());
        let qr = a.clone().qr();
        let coef = qr.r().solve_upper_triangular(&(qr.q().transpose() * &y)).unwrap();
        (a * coef).iter().copied().collect()
    }

    #[test]
    fn standardize_small_column() {
        let x = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 7.0, 7.0, 7.0]);
        let d = DesignMatrix::new(x, names(2), vec![1.0, 0.0, 2.0]).unwrap();
        let (s, params) = standardize(&d).unwrap();
        let expected = 1.5f64.sqrt();
        assert!((s.x()[(0, 0)] + expected).abs() < 1e-12);
        assert!(s.x()[(1, 0)].abs() < 1e-15);
        assert!((s.x()[(2, 0)] - expected).abs() < 1e-12);
        assert_eq!(params.dropped, vec!["f1".to_string()]);
        assert_eq!(s.columns(), &["f0".to_string()]);
        assert_eq!(s.response(), &[0.0, -1.0, 1.0]);

        let all_constant = DesignMatrix::new(DMatrix::from_element(4, 2, 3.0), names(2), vec![1.0; 4]).unwrap();
        assert!(standardize(&all_constant).is_err());
    }

    #[test]
    fn standardize_is_idempotent_and_invertible() {
        let d = random_design(1, 40, 6);
        let (s, params) = standardize(&d).unwrap();
        for j in 0..6 {
            let (m, sd) = column_mean_sd(s.x().column(j).as_slice());
            assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
        let (s2, _) = standardize(&s).unwrap();
        assert!((s2.x() - s.x()).amax() < 1e-10);
        let back = params.apply(d.x(), d.columns()).unwrap();
        assert!((back - s.x()).amax() < 1e-12);
    }

    #[test]
    fn zero_penalty_matches_least_squares() {
        let d = random_design(2, 50, 5);
        let (s, params) = standardize(&d).unwrap();
        let fit = fit_elastic_net(&s, 0.0, 0.5, 1e-10, DEFAULT_MAX_PASSES).unwrap();
        let pred = predict(&fit, &params, d.x(), d.columns()).unwrap();
        for (a, b) in pred.iter().zip(ols_fitted(&d)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn ridge_matches_closed_form() {
        let d = random_design(3, 30, 8);
        let (s, _) = standardize(&d).unwrap();
        let n = s.n_rows() as f64;
        let lambda = 0.3;
        let fit = fit_elastic_net(&s, lambda, 0.0, 1e-13, DEFAULT_MAX_PASSES).unwrap();
        let gram = s.x().transpose() * s.x() / n + DMatrix::identity(8, 8) * lambda;
        let rhs = s.x().transpose() * DVector::from_column_slice(s.response()) / n;
        let exact = gram.lu().solve(&rhs).unwrap();
        for (a, b) in fit.coefficients.iter().zip(exact.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn univariate_lasso_is_soft_threshold() {
        let x = DMatrix::from_column_slice(5, 1, &[0.3, -1.2, 2.0, 0.1, -0.4]);
        let d = DesignMatrix::new(x, names(1), vec![1.0, -2.0, 3.5, 0.2, 0.0]).unwrap();
        let (s, _) = standardize(&d).unwrap();
        let n = 5.0;
        let xty: f64 = s.x().column(0).dot(&DVector::from_column_slice(s.response())) / n;
        for lambda in [0.0, 0.1, 0.5, xty.abs() * 0.9, xty.abs() * 1.1] {
            let fit = fit_elastic_net(&s, lambda, 1.0, 1e-12, 100).unwrap();
            let expected = soft_threshold(xty, lambda);
            assert!((fit.coefficients[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_max_gives_empty_model() {
        let d = random_design(4, 40, 10);
        let (s, params) = standardize(&d).unwrap();
        let path = lambda_path(&s, 0.5, 20, 1e-2).unwrap();
        assert_eq!(path.len(), 20);
        assert!(path.windows(2).all(|w| w[0] > w[1]));
        assert!((path[19] - path[0] * 1e-2).abs() < 1e-12 * path[0]);
        let fit = fit_elastic_net(&s, path[0], 0.5, 1e-7, 1000).unwrap();
        assert!(fit.coefficients.iter().all(|&b| b == 0.0));
        assert!(fit.active_set().is_empty());
        let pred = predict(&fit, &params, d.x(), d.columns()).unwrap();
        assert!(pred.iter().all(|&v| (v - params.response_mean).abs() < 1e-12));

        assert_eq!(lambda_path(&s, 0.5, 1, 1e-3).unwrap(), vec![path[0]]);
        assert!(lambda_path(&s, 0.5, 5, 1.0).unwrap().iter().all(|&l| l == path[0]));
        assert!(lambda_path(&s, 0.0, 5, 1e-3).is_err());
    }

    #[test]
    fn lambda_max_on_orthonormal_design() {
        // columns are ±1 patterns, mutually orthogonal and already standardized
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        let y = vec![3.0, 1.0, -1.0, -3.0];
        let d = DesignMatrix::new(x, names(2), y).unwrap();
        // xᵀy = (8, 4), N = 4
        assert!((lambda_max(&d, 0.5).unwrap() - 8.0 / (4.0 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn unpenalized_columns_survive_lambda_max() {
        let d = random_design(5, 40, 6);
        let mut pen = vec![true; 6];
        pen[0] = false;
        let d = DesignMatrix::with_penalties(d.x().clone(), names(6), d.response().to_vec(), pen).unwrap();
        let (s, _) = standardize(&d).unwrap();
        let top = lambda_max(&s, 0.5).unwrap();
        let fit = fit_elastic_net(&s, top * (1.0 + 1e-9), 0.5, 1e-10, 10_000).unwrap();
        assert!(fit.coefficients[0] != 0.0);
        assert!(fit.coefficients[1..].iter().all(|&b| b == 0.0));
        let below = fit_elastic_net(&s, top * 0.9, 0.5, 1e-10, 10_000).unwrap();
        assert!(below.coefficients[1..].iter().any(|&b| b != 0.0));
    }

    #[test]
    fn identical_columns_share_weight() {
        let d = random_design(6, 40, 4);
        let mut x = d.x().clone();
        let dup = x.column(0).clone_owned();
        x = x.insert_column(4, 0.0);
        x.set_column(4, &dup);
        let d = DesignMatrix::new(x, names(5), d.response().to_vec()).unwrap();
        let (s, _) = standardize(&d).unwrap();
        let fit = fit_elastic_net(&s, 0.05, 0.5, 1e-12, DEFAULT_MAX_PASSES).unwrap();
        assert!(fit.coefficients[0] != 0.0);
        assert!((fit.coefficients[0] - fit.coefficients[4]).abs() < 1e-6);
    }

    #[test]
    fn warm_path_matches_cold_fits() {
        let d = random_design(7, 60, 30);
        let (s, _) = standardize(&d).unwrap();
        let path = lambda_path(&s, 0.5, 25, 1e-3).unwrap();
        let warm = fit_path(&s, &path, 0.5, 1e-9, DEFAULT_MAX_PASSES).unwrap();
        for (fit, &lambda) in warm.iter().zip(&path) {
            let cold = fit_elastic_net(&s, lambda, 0.5, 1e-9, DEFAULT_MAX_PASSES).unwrap();
            for (a, b) in fit.coefficients.iter().zip(&cold.coefficients) {
                assert!((a - b).abs() < 1e-6);
            }
            assert!(kkt_violation(&s, fit).unwrap() <= KKT_TOLERANCE);
        }
    }

    #[test]
    fn argument_and_convergence_errors() {
        let d = random_design(8, 30, 20);
        let (s, params) = standardize(&d).unwrap();
        assert!(matches!(fit_elastic_net(&s, -1.0, 0.5, 1e-7, 10), Err(Error::InvalidArgument(_))));
        assert!(matches!(fit_elastic_net(&s, 0.1, 1.5, 1e-7, 10), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            fit_elastic_net(&s, 1e-4, 0.5, 1e-14, 1),
            Err(Error::ElasticNetNotConverged { passes: 1, .. })
        ));
        assert!(fit_elastic_net(&d, 0.1, 0.5, 1e-7, 100).is_err());

        let fit = fit_elastic_net(&s, 0.1, 0.5, 1e-7, DEFAULT_MAX_PASSES).unwrap();
        let mut cols = d.columns().to_vec();
        cols[3] = "other".into();
        match predict(&fit, &params, d.x(), &cols) {
            Err(Error::ColumnMismatch { missing, unexpected }) => {
                assert_eq!(missing, vec!["f3".to_string()]);
                assert_eq!(unexpected, vec!["other".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prediction_is_row_local_and_order_free() {
        let d = random_design(9, 30, 4);
        let (s, params) = standardize(&d).unwrap();
        let fit = fit_elastic_net(&s, 0.05, 0.5, 1e-9, DEFAULT_MAX_PASSES).unwrap();
        let all = predict(&fit, &params, d.x(), d.columns()).unwrap();
        let row = d.x().rows(7, 1).clone_owned();
        assert_eq!(predict(&fit, &params, &row, d.columns()).unwrap()[0], all[7]);

        let perm = [2usize, 0, 3, 1];
        let shuffled = d.x().select_columns(&perm);
        let cols: Vec<String> = perm.iter().map(|&j| d.columns()[j].clone()).collect();
        let again = predict(&fit, &params, &shuffled, &cols).unwrap();
        for (a, b) in again.iter().zip(&all) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn model_round_trips_through_json() {
        let d = random_design(10, 30, 5);
        let (s, params) = standardize(&d).unwrap();
        let fit = fit_elastic_net(&s, 0.05, 0.5, 1e-9, DEFAULT_MAX_PASSES).unwrap();
        let model = ElasticNetModel::new(&fit, &params).unwrap();
        let back = ElasticNetModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let a = back.predict(d.x(), d.columns()).unwrap();
        let b = predict(&fit, &params, d.x(), d.columns()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
        // raw-scale coefficients reproduce the same predictions
        for (i, v) in b.iter().enumerate() {
            let direct: f64 = model.intercept + (0..5).map(|j| model.coefficients[j] * d.x()[(i, j)]).sum::<f64>();
            assert!((direct - v).abs() < 1e-10);
        }
        let tampered = model.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(ElasticNetModel::from_json(&tampered).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn returned_fits_satisfy_kkt(seed in any::<u64>(), n in 10usize..40, p in 1usize..60, frac in 0.001f64..1.0, alpha in 0.05f64..1.0) {
            let d = random_design(seed, n, p);
            let (s, _) = standardize(&d).unwrap();
            let lambda = lambda_max(&s, alpha).unwrap() * frac;
            let fit = fit_elastic_net(&s, lambda, alpha, DEFAULT_TOLERANCE, DEFAULT_MAX_PASSES).unwrap();
            prop_assert!(kkt_violation(&s, &fit).unwrap() <= KKT_TOLERANCE);
        }
    }
}
