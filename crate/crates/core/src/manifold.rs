//! Distances, means and tangent-space mapping for the three geometries over
//! SPD matrices: Euclidean, Log-Euclidean and affine-invariant Riemannian.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::{
    eig_sym, matrix_exp, matrix_invsqrt, matrix_log, matrix_sqrt, SpdMatrix, SymmetricMatrix,
};

/// Which geometry produced an artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GeometryKind {
    #[serde(rename = "EUC")]
    Euclidean,
    #[serde(rename = "TAN_log")]
    LogEuclidean,
    #[serde(rename = "TAN_rie")]
    Riemannian,
}

impl GeometryKind {
    pub const ALL: [GeometryKind; 3] = [
        GeometryKind::Euclidean,
        GeometryKind::LogEuclidean,
        GeometryKind::Riemannian,
    ];

    pub fn label(self) -> &'static str {
        match self {
            GeometryKind::Euclidean => "EUC",
            GeometryKind::LogEuclidean => "TAN_log",
            GeometryKind::Riemannian => "TAN_rie",
        }
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euc" | "euclidean" => Ok(GeometryKind::Euclidean),
            "tan_log" | "log" | "logeuclidean" | "log-euclidean" => Ok(GeometryKind::LogEuclidean),
            "tan_rie" | "rie" | "riemannian" => Ok(GeometryKind::Riemannian),
            _ => Err(Error::invalid(format!("unknown geometry '{s}'"))),
        }
    }
}

/// Stopping rule for the Karcher mean fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KarcherConfig {
    /// Stop once the Frobenius norm of the Riemannian gradient falls to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial relaxation step in (0, 1]; halved whenever the cost fails to decrease.
    pub step: f64,
}

impl Default for KarcherConfig {
    fn default() -> Self {
        KarcherConfig {
            tolerance: 1e-9,
            max_iterations: 50,
            step: 1.0,
        }
    }
}

impl KarcherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("Karcher tolerance must be positive"));
        }
        if self.max_iterations < 1 {
            return Err(Error::invalid("Karcher max_iterations must be at least 1"));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::invalid("Karcher step must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Result of [`mean_riemannian`].
#[derive(Debug, Clone)]
pub struct KarcherMean {
    pub mean: SpdMatrix,
    pub iterations: usize,
    pub gradient_norm: f64,
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

fn check_family(ms: &[SpdMatrix]) -> Result<usize> {
    let first = ms
        .first()
        .ok_or_else(|| Error::invalid("cannot average an empty list of matrices"))?;
    let dim = first.dim();
    for m in ms {
        check_same_dim(dim, m.dim())?;
    }
    Ok(dim)
}

/// Frobenius distance `‖a − b‖_F`.
pub fn dist_euclidean(a: &SymmetricMatrix, b: &SymmetricMatrix) -> Result<f64> {
    check_same_dim(a.dim(), b.dim())?;
    Ok((a.as_matrix() - b.as_matrix()).norm())
}

/// Arithmetic mean of the matrices.
pub fn mean_euclidean(ms: &[SpdMatrix]) -> Result<SpdMatrix> {
    let dim = check_family(ms)?;
    let mut sum = DMatrix::zeros(dim, dim);
    for m in ms {
        sum += m.as_matrix();
    }
    sum /= ms.len() as f64;
    SpdMatrix::new(SymmetricMatrix::symmetrize(&sum)?)
}

/// `‖log a − log b‖_F`.
pub fn dist_logeuclidean(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    check_same_dim(a.dim(), b.dim())?;
    Ok((matrix_log(a).as_matrix() - matrix_log(b).as_matrix()).norm())
}

/// `exp(mean of log C_i)`.
pub fn mean_logeuclidean(ms: &[SpdMatrix]) -> Result<SpdMatrix> {
    let dim = check_family(ms)?;
    let logs: Vec<SymmetricMatrix> = ms.par_iter().map(matrix_log).collect();
    let mut sum = DMatrix::zeros(dim, dim);
    for l in &logs {
        sum += l.as_matrix();
    }
    sum /= ms.len() as f64;
    matrix_exp(&SymmetricMatrix::symmetrize(&sum)?)
}

/// `a^{-1/2} b a^{-1/2}`, symmetrized.
fn whiten(invsqrt: &DMatrix<f64>, b: &SpdMatrix) -> Result<SymmetricMatrix> {
    SymmetricMatrix::symmetrize(&(invsqrt * b.as_matrix() * invsqrt))
}

/// Log of a whitened matrix together with its squared Frobenius norm.
fn whitened_log(invsqrt: &DMatrix<f64>, b: &SpdMatrix) -> Result<(SymmetricMatrix, f64)> {
    let eig = eig_sym(&whiten(invsqrt, b)?)?;
    if eig.min_eigenvalue() <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: eig.min_eigenvalue(),
            threshold: 0.0,
        });
    }
    let sq: f64 = eig.eigenvalues().iter().map(|l| l.ln().powi(2)).sum();
    Ok((eig.map_spectrum(f64::ln), sq))
}

/// Affine-invariant distance `‖log(a^{-1/2} b a^{-1/2})‖_F = (Σ ln² λ_i)^{1/2}`.
pub fn dist_riemannian(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    check_same_dim(a.dim(), b.dim())?;
    let w = matrix_invsqrt(a);
    let eig = eig_sym(&whiten(w.as_matrix(), b)?)?;
    if eig.min_eigenvalue() <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: eig.min_eigenvalue(),
            threshold: 0.0,
        });
    }
    Ok(eig
        .eigenvalues()
        .iter()
        .map(|l| l.ln().powi(2))
        .sum::<f64>()
        .sqrt())
}

struct KarcherState {
    gradient: DMatrix<f64>,
    cost: f64,
}

fn karcher_state(point: &SpdMatrix, ms: &[SpdMatrix]) -> Result<KarcherState> {
    let w = matrix_invsqrt(point);
    let terms: Vec<Result<(SymmetricMatrix, f64)>> = ms
        .par_iter()
        .map(|c| whitened_log(w.as_matrix(), c))
        .collect();
    let dim = point.dim();
    let mut gradient = DMatrix::zeros(dim, dim);
    let mut cost = 0.0;
    // fixed-order reduction keeps results independent of the worker count
    for term in terms {
        let (log, sq) = term?;
        gradient += log.as_matrix();
        cost += sq;
    }
    gradient /= ms.len() as f64;
    Ok(KarcherState { gradient, cost })
}

/// Riemannian gradient norm `‖(1/N) Σ log(M^{-1/2} C_i M^{-1/2})‖_F` at `point`.
pub fn karcher_gradient_norm(point: &SpdMatrix, ms: &[SpdMatrix]) -> Result<f64> {
    check_family(ms)?;
    check_same_dim(point.dim(), ms[0].dim())?;
    Ok(karcher_state(point, ms)?.gradient.norm())
}

/// Sum of squared affine-invariant distances from `point` to every matrix.
pub fn karcher_cost(point: &SpdMatrix, ms: &[SpdMatrix]) -> Result<f64> {
    check_family(ms)?;
    Ok(karcher_state(point, ms)?.cost)
}

/// Smallest relaxation step proposed by the curvature estimate.
const MIN_STEP: f64 = 0.05;

/// Karcher (Fréchet) mean under the affine-invariant metric.
///
/// Relaxed fixed-point iteration `M ← M^{1/2} exp(step · A) M^{1/2}` where
/// `A` is the mean of the whitened logs, started at the Log-Euclidean mean.
/// The step starts at `cfg.step`, is then set from a Barzilai-Borwein
/// curvature estimate (capped at `cfg.step`), and is halved whenever the cost
/// `Σ d²(M, C_i)` would increase.
pub fn mean_riemannian(ms: &[SpdMatrix], cfg: &KarcherConfig) -> Result<KarcherMean> {
    cfg.validate()?;
    check_family(ms)?;
    let mut point = mean_logeuclidean(ms)?;
    let mut state = karcher_state(&point, ms)?;
    let mut step = cfg.step;
    let mut iterations = 0;
    loop {
        let gradient_norm = state.gradient.norm();
        if gradient_norm <= cfg.tolerance {
            return Ok(KarcherMean {
                mean: point,
                iterations,
                gradient_norm,
            });
        }
        if iterations == cfg.max_iterations {
            return Err(Error::KarcherNotConverged {
                iterations,
                gradient_norm,
            });
        }
        let root = matrix_sqrt(&point);
        let slack = 1e-12 * state.cost.max(f64::MIN_POSITIVE);
        let (next_point, next_state) = loop {
            let direction = SymmetricMatrix::symmetrize(&(&state.gradient * step))?;
            let moved = matrix_exp(&direction)?;
            let candidate = SpdMatrix::new(SymmetricMatrix::symmetrize(
                &(root.as_matrix() * moved.as_matrix() * root.as_matrix()),
            )?)?;
            let candidate_state = karcher_state(&candidate, ms)?;
            if candidate_state.cost <= state.cost + slack || step < 1e-8 {
                break (candidate, candidate_state);
            }
            step *= 0.5;
        };
        // Barzilai-Borwein estimate of the inverse curvature along the move,
        // comparing whitened gradients as if they shared one tangent space
        let moved = &state.gradient * step;
        let change = &state.gradient - &next_state.gradient;
        let curvature = moved.dot(&change);
        step = if curvature > 0.0 {
            (moved.norm_squared() / curvature).clamp(MIN_STEP, cfg.step)
        } else {
            cfg.step
        };
        point = next_point;
        state = next_state;
        iterations += 1;
    }
}

/// Number of entries in the upper triangle (with diagonal) of a `dim × dim` matrix.
pub fn upper_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Row-major upper triangle including the diagonal.
///
/// In isometric mode the strict off-diagonal entries are multiplied by √2 so
/// the Euclidean norm of the vector equals the Frobenius norm of the matrix.
pub fn upper_vectorize(m: &SymmetricMatrix, isometric: bool) -> Vec<f64> {
    let n = m.dim();
    let weight = if isometric { std::f64::consts::SQRT_2 } else { 1.0 };
    let mut out = Vec::with_capacity(upper_len(n));
    for i in 0..n {
        out.push(m.get(i, i));
        for j in (i + 1)..n {
            out.push(weight * m.get(i, j));
        }
    }
    out
}

/// Inverse of [`upper_vectorize`].
pub fn upper_unvectorize(values: &[f64], dim: usize, isometric: bool) -> Result<SymmetricMatrix> {
    if values.len() != upper_len(dim) {
        return Err(Error::DimensionMismatch {
            expected: upper_len(dim),
            got: values.len(),
        });
    }
    let weight = if isometric { std::f64::consts::SQRT_2 } else { 1.0 };
    let mut m = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        m[(i, i)] = values[k];
        k += 1;
        for j in (i + 1)..dim {
            let v = values[k] / weight;
            m[(i, j)] = v;
            m[(j, i)] = v;
            k += 1;
        }
    }
    SymmetricMatrix::new(m)
}

/// Tangent-space coordinates of a matrix relative to a reference point.
#[derive(Debug, Clone)]
pub struct TangentVector {
    pub values: Vec<f64>,
    pub reference: SpdMatrix,
    pub isometric: bool,
}

/// A reference point with its whitening transform precomputed, for mapping
/// many matrices into the same tangent space.
#[derive(Debug, Clone)]
pub struct TangentSpace {
    reference: SpdMatrix,
    invsqrt: SpdMatrix,
    isometric: bool,
}

impl TangentSpace {
    pub fn new(reference: SpdMatrix, isometric: bool) -> Self {
        let invsqrt = matrix_invsqrt(&reference);
        TangentSpace {
            reference,
            invsqrt,
            isometric,
        }
    }

    pub fn reference(&self) -> &SpdMatrix {
        &self.reference
    }

    /// `upper(log(M_G^{-1/2} m M_G^{-1/2}))`.
    pub fn map(&self, m: &SpdMatrix) -> Result<Vec<f64>> {
        check_same_dim(self.reference.dim(), m.dim())?;
        let (log, _) = whitened_log(self.invsqrt.as_matrix(), m)?;
        Ok(upper_vectorize(&log, self.isometric))
    }
}

/// Maps `m` into the tangent space at `reference`.
pub fn tangent_map(m: &SpdMatrix, reference: &SpdMatrix, isometric: bool) -> Result<TangentVector> {
    let space = TangentSpace::new(reference.clone(), isometric);
    let values = space.map(m)?;
    Ok(TangentVector {
        values,
        reference: reference.clone(),
        isometric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::{random_spd, random_symmetric};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const E: f64 = std::f64::consts::E;

    fn diag(v: &[f64]) -> SpdMatrix {
        SpdMatrix::from_diagonal(v).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn euclidean_distance_examples() {
        let i = SymmetricMatrix::identity(2);
        assert_eq!(dist_euclidean(&i, &i).unwrap(), 0.0);
        let a = SymmetricMatrix::from_diagonal(&[2.0, 2.0]);
        let z = SymmetricMatrix::zeros(2);
        assert!((dist_euclidean(&a, &z).unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_spd(&mut rng, 4);
        let b = random_spd(&mut rng, 4);
        let mut sum = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                sum += (a.as_matrix()[(r, c)] - b.as_matrix()[(r, c)]).powi(2);
            }
        }
        let d = dist_euclidean(a.as_symmetric(), b.as_symmetric()).unwrap();
        assert!(rel(d, sum.sqrt()) < 1e-14);
        assert!(dist_euclidean(&SymmetricMatrix::identity(2), &SymmetricMatrix::identity(3)).is_err());
    }

    #[test]
    fn euclidean_mean_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_spd(&mut rng, 3);
        let m = mean_euclidean(&[c.clone(), c.clone(), c.clone()]).unwrap();
        assert!((m.as_matrix() - c.as_matrix()).norm() < 1e-14);

        let m = mean_euclidean(&[diag(&[2.0, 0.5]), diag(&[0.5, 2.0])]).unwrap();
        assert_eq!(m.as_matrix()[(0, 0)], 1.25);
        assert_eq!(m.as_matrix()[(1, 1)], 1.25);
        assert!((m.determinant() - 1.5625).abs() < 1e-12);

        let ms: Vec<SpdMatrix> = (0..10).map(|_| random_spd(&mut rng, 4)).collect();
        let mean = mean_euclidean(&ms).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let oracle: f64 = ms.iter().map(|m| m.as_matrix()[(r, c)]).sum::<f64>() / 10.0;
                assert!((mean.as_matrix()[(r, c)] - oracle).abs() < 1e-14);
            }
        }
        assert!(mean_euclidean(&[]).is_err());
    }

    #[test]
    fn log_euclidean_examples() {
        let i = SpdMatrix::identity(2);
        assert_eq!(dist_logeuclidean(&i, &i).unwrap(), 0.0);
        let b = diag(&[E * E, E * E]);
        assert!((dist_logeuclidean(&i, &b).unwrap() - 8f64.sqrt()).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_spd(&mut rng, 4);
        let b = random_spd(&mut rng, 4);
        let oracle = (matrix_log(&a).as_matrix() - matrix_log(&b).as_matrix()).norm();
        assert_eq!(dist_logeuclidean(&a, &b).unwrap(), oracle);

        let m = mean_logeuclidean(&[diag(&[2.0, 0.5]), diag(&[0.5, 2.0])]).unwrap();
        assert!((m.as_matrix() - DMatrix::<f64>::identity(2, 2)).norm() < 1e-15);
        assert!((m.determinant() - 1.0).abs() < 1e-10);

        let c = random_spd(&mut rng, 3);
        let m = mean_logeuclidean(std::slice::from_ref(&c)).unwrap();
        assert!((m.as_matrix() - c.as_matrix()).norm() / c.as_matrix().norm() < 1e-12);
    }

    #[test]
    fn log_euclidean_mean_of_diagonal_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let family: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(0.1..5.0)).collect())
            .collect();
        let ms: Vec<SpdMatrix> = family.iter().map(|d| diag(d)).collect();
        let m = mean_logeuclidean(&ms).unwrap();
        for k in 0..4 {
            let oracle = (family.iter().map(|d| d[k].ln()).sum::<f64>() / 6.0).exp();
            assert!(rel(m.as_matrix()[(k, k)], oracle) < 1e-12);
        }
        let det_oracle = (ms.iter().map(|m| m.log_determinant()).sum::<f64>() / 6.0).exp();
        assert!(rel(m.determinant(), det_oracle) < 1e-8);
    }

    #[test]
    fn riemannian_distance_examples() {
        let i = SpdMatrix::identity(2);
        assert_eq!(dist_riemannian(&i, &i).unwrap(), 0.0);
        let b = diag(&[E * E, E * E]);
        assert!((dist_riemannian(&i, &b).unwrap() - 8f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn riemannian_distance_is_congruence_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_spd(&mut rng, 5);
        let b = random_spd(&mut rng, 5);
        let w = random_invertible(&mut rng, 5);
        let d0 = dist_riemannian(&a, &b).unwrap();
        let d1 = dist_riemannian(&a.congruence(&w).unwrap(), &b.congruence(&w).unwrap()).unwrap();
        assert!(rel(d1, d0) < 1e-8);
    }

    fn random_invertible(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
        let mut w = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        w /= (dim as f64).sqrt();
        for i in 0..dim {
            w[(i, i)] += 2.0;
        }
        w
    }

    /// `a^{1/2} (a^{-1/2} b a^{-1/2})^{1/2} a^{1/2}`.
    fn geodesic_midpoint(a: &SpdMatrix, b: &SpdMatrix) -> DMatrix<f64> {
        let r = matrix_sqrt(a);
        let w = matrix_invsqrt(a);
        let inner = SpdMatrix::new(
            SymmetricMatrix::symmetrize(&(w.as_matrix() * b.as_matrix() * w.as_matrix())).unwrap(),
        )
        .unwrap();
        r.as_matrix() * matrix_sqrt(&inner).as_matrix() * r.as_matrix()
    }

    #[test]
    fn karcher_mean_of_two_is_geodesic_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for dim in [2, 5, 19] {
            let a = random_spd(&mut rng, dim);
            let b = random_spd(&mut rng, dim);
            let k = mean_riemannian(&[a.clone(), b.clone()], &KarcherConfig::default()).unwrap();
            let mid = geodesic_midpoint(&a, &b);
            assert!((k.mean.as_matrix() - &mid).norm() / mid.norm() <= 1e-8);
        }
    }

    #[test]
    fn karcher_mean_trivial_and_commuting_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = random_spd(&mut rng, 4);
        let k = mean_riemannian(&[c.clone(), c.clone()], &KarcherConfig::default()).unwrap();
        assert!((k.mean.as_matrix() - c.as_matrix()).norm() / c.as_matrix().norm() < 1e-12);

        let ms: Vec<SpdMatrix> = (0..7)
            .map(|_| diag(&(0..5).map(|_| rng.random_range(0.05..20.0)).collect::<Vec<_>>()))
            .collect();
        let rie = mean_riemannian(&ms, &KarcherConfig::default()).unwrap();
        let log = mean_logeuclidean(&ms).unwrap();
        assert!((rie.mean.as_matrix() - log.as_matrix()).norm() <= 1e-10);
    }

    #[test]
    fn karcher_mean_meets_gradient_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ms: Vec<SpdMatrix> = (0..10).map(|_| random_spd(&mut rng, 19)).collect();
        let cfg = KarcherConfig::default();
        let k = mean_riemannian(&ms, &cfg).unwrap();
        assert!(k.iterations <= cfg.max_iterations);
        let g = karcher_gradient_norm(&k.mean, &ms).unwrap();
        assert!(g <= cfg.tolerance, "gradient {g}");
    }

    #[test]
    fn karcher_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ms: Vec<SpdMatrix> = (0..5).map(|_| random_spd(&mut rng, 6)).collect();
        let cfg = KarcherConfig {
            tolerance: 1e-300,
            max_iterations: 2,
            step: 1.0,
        };
        match mean_riemannian(&ms, &cfg) {
            Err(Error::KarcherNotConverged { iterations, gradient_norm }) => {
                assert_eq!(iterations, 2);
                assert!(gradient_norm > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
        assert!(mean_riemannian(&[], &KarcherConfig::default()).is_err());
    }

    #[test]
    fn karcher_mean_is_congruence_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ms: Vec<SpdMatrix> = (0..6).map(|_| random_spd(&mut rng, 5)).collect();
        let w = random_invertible(&mut rng, 5);
        let moved: Vec<SpdMatrix> = ms.iter().map(|m| m.congruence(&w).unwrap()).collect();
        let cfg = KarcherConfig::default();
        let a = mean_riemannian(&ms, &cfg).unwrap().mean.congruence(&w).unwrap();
        let b = mean_riemannian(&moved, &cfg).unwrap().mean;
        assert!((a.as_matrix() - b.as_matrix()).norm() / b.as_matrix().norm() <= 1e-6);
    }

    #[test]
    fn swelling_contrast() {
        let pair = [diag(&[2.0, 0.5]), diag(&[0.5, 2.0])];
        let euc = mean_euclidean(&pair).unwrap();
        let log = mean_logeuclidean(&pair).unwrap();
        let rie = mean_riemannian(&pair, &KarcherConfig::default()).unwrap().mean;
        assert!(euc.determinant() > pair[0].determinant());
        assert!((log.determinant() - 1.0).abs() <= 1e-10);
        assert!((rie.determinant() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn tangent_map_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let r = random_spd(&mut rng, 4);
        let t = tangent_map(&r, &r, true).unwrap();
        assert!(t.values.iter().all(|v| v.abs() < 1e-12));

        let m = diag(&[E * E, 1.0]);
        let t = tangent_map(&m, &SpdMatrix::identity(2), true).unwrap();
        assert!((t.values[0] - 2.0).abs() < 1e-14);
        assert!(t.values[1].abs() < 1e-14 && t.values[2].abs() < 1e-14);
        let d = dist_riemannian(&SpdMatrix::identity(2), &m).unwrap();
        assert!((norm(&t.values) - d).abs() < 1e-14);

        let m = random_spd(&mut rng, 6);
        let r = random_spd(&mut rng, 6);
        let t = tangent_map(&m, &r, true).unwrap();
        assert_eq!(t.values.len(), 21);
        assert!(rel(norm(&t.values), dist_riemannian(&r, &m).unwrap()) <= 1e-8);
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn upper_vectorize_examples() {
        assert_eq!(upper_vectorize(&SymmetricMatrix::identity(19), false).len(), 190);
        assert_eq!(upper_vectorize(&SymmetricMatrix::identity(76), true).len(), 2926);
        assert_eq!(upper_vectorize(&SymmetricMatrix::identity(2), false), vec![1.0, 0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_symmetric(&mut rng, 5);
        let v = upper_vectorize(&m, true);
        assert!((norm(&v) - m.frobenius_norm()).abs() <= 1e-12);
        let back = upper_unvectorize(&v, 5, true).unwrap();
        assert!((back.as_matrix() - m.as_matrix()).norm() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn distances_are_metrics(seed in any::<u64>(), dim in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(&mut rng, dim);
            let b = random_spd(&mut rng, dim);
            for d in [
                |x: &SpdMatrix, y: &SpdMatrix| dist_euclidean(x.as_symmetric(), y.as_symmetric()).unwrap(),
                |x: &SpdMatrix, y: &SpdMatrix| dist_logeuclidean(x, y).unwrap(),
                |x: &SpdMatrix, y: &SpdMatrix| dist_riemannian(x, y).unwrap(),
            ] {
                let ab = d(&a, &b);
                prop_assert!(ab > 0.0);
                prop_assert!(rel(d(&b, &a), ab) < 1e-10);
                prop_assert!(d(&a, &a) < 1e-10);
            }
            let ai = a.inverse();
            let bi = b.inverse();
            prop_assert!(rel(dist_riemannian(&ai, &bi).unwrap(), dist_riemannian(&a, &b).unwrap()) < 1e-8);
        }
    }
}
