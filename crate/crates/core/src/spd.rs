//! Dense symmetric matrix algebra.
//!
//! Every matrix function here (log, exp, square root, inverse square root)
//! goes through one symmetric eigendecomposition `A = V diag(λ) Vᵀ` and is
//! evaluated as `V diag(f(λ)) Vᵀ`. Inputs are symmetric by construction, so
//! the spectral form is exact and no Padé or scaling-and-squaring is needed.
//!
//! [`SpdMatrix`] certifies positive definiteness with the relative threshold
//! `λ_min > 1e-10 · λ_max` and caches its eigendecomposition, so matrix
//! functions of an SPD matrix never re-decompose.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative positive-definiteness threshold: `λ_min` must exceed this times `λ_max`.
pub const SPD_RELATIVE_THRESHOLD: f64 = 1e-10;

/// Relative tolerance of the symmetry check.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITERATIONS: usize = 10_000;

/// Certification threshold for a spectrum whose largest eigenvalue is `max_eig`.
pub fn spd_threshold(max_eig: f64) -> f64 {
    SPD_RELATIVE_THRESHOLD * max_eig.max(0.0)
}

/// A dense square matrix whose entries satisfy
/// `|a[i][j] - a[j][i]| <= 1e-10 · max(1, |a[i][j]|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::invalid("matrix dimension must be positive"));
        }
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let a = m[(i, j)];
                let b = m[(j, i)];
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::invalid(format!("non-finite entry at ({i}, {j})")));
                }
                let difference = (a - b).abs();
                if difference > SYMMETRY_TOLERANCE * a.abs().max(1.0) {
                    return Err(Error::NotSymmetric {
                        row: i,
                        col: j,
                        difference,
                    });
                }
            }
            if !m[(i, i)].is_finite() {
                return Err(Error::invalid(format!("non-finite entry at ({i}, {i})")));
            }
        }
        Ok(SymmetricMatrix(m))
    }

    /// Builds `(m + mᵀ) / 2`. The result is exactly symmetric.
    pub fn symmetrize(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        Ok(SymmetricMatrix(symmetrized(m)))
    }

    pub fn zeros(dim: usize) -> Self {
        SymmetricMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        SymmetricMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymmetricMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, factor: f64) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 * factor)
    }
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigendecomposition {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl Eigendecomposition {
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors, one per column, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `V diag(f(λ)) Vᵀ`, symmetrized exactly.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymmetricMatrix {
        let values: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        SymmetricMatrix(compose(&self.eigenvectors, &values))
    }
}

fn compose(vectors: &DMatrix<f64>, values: &[f64]) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (j, &v) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(v);
    }
    symmetrized(&(scaled * vectors.transpose()))
}

/// Symmetric eigendecomposition (eigenvalues ascending).
pub fn eig_sym(m: &SymmetricMatrix) -> Result<Eigendecomposition> {
    let dim = m.dim();
    let eig = m
        .0
        .clone()
        .try_symmetric_eigen(EIGEN_EPS, EIGEN_MAX_ITERATIONS)
        .ok_or(Error::EigenNonConvergence { dim })?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(dim, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(Eigendecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// A symmetric positive-definite matrix with its cached spectrum.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    base: SymmetricMatrix,
    eig: Eigendecomposition,
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base
    }
}

impl SpdMatrix {
    /// Certifies `m` as SPD, failing with [`Error::NotPositiveDefinite`]
    /// carrying the offending eigenvalue.
    pub fn new(m: SymmetricMatrix) -> Result<Self> {
        let eig = eig_sym(&m)?;
        let threshold = spd_threshold(eig.max_eigenvalue());
        let min = eig.min_eigenvalue();
        if !(min > threshold) {
            return Err(Error::NotPositiveDefinite {
                eigenvalue: min,
                threshold,
            });
        }
        Ok(SpdMatrix { base: m, eig })
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        Self::new(SymmetricMatrix::new(m)?)
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_spectrum(DMatrix::identity(dim, dim), vec![1.0; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(SymmetricMatrix::from_diagonal(diag))
    }

    /// Builds `V diag(values) Vᵀ` from a known orthonormal basis and strictly
    /// positive spectrum, keeping that spectrum as the certificate.
    pub(crate) fn from_spectrum(vectors: DMatrix<f64>, values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|&v| v > 0.0));
        let base = SymmetricMatrix(compose(&vectors, &values));
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let dim = values.len();
        let eigenvalues = DVector::from_iterator(dim, order.iter().map(|&k| values[k]));
        let mut eigenvectors = DMatrix::zeros(dim, dim);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &vectors.column(src));
        }
        SpdMatrix {
            base,
            eig: Eigendecomposition {
                eigenvalues,
                eigenvectors,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn as_symmetric(&self) -> &SymmetricMatrix {
        &self.base
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.base.as_matrix()
    }

    pub fn eigen(&self) -> &Eigendecomposition {
        &self.eig
    }

    /// The positive-definiteness certificate.
    pub fn min_eigenvalue(&self) -> f64 {
        self.eig.min_eigenvalue()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eig.max_eigenvalue()
    }

    pub fn determinant(&self) -> f64 {
        self.eig.eigenvalues.iter().product()
    }

    pub fn log_determinant(&self) -> f64 {
        self.eig.eigenvalues.iter().map(|l| l.ln()).sum()
    }

    pub fn inverse(&self) -> SpdMatrix {
        let values = self.eig.eigenvalues.iter().map(|l| 1.0 / l).collect();
        Self::from_spectrum(self.eig.eigenvectors.clone(), values)
    }

    /// `W · self · Wᵀ`, re-certified.
    pub fn congruence(&self, w: &DMatrix<f64>) -> Result<SpdMatrix> {
        if w.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: w.ncols(),
            });
        }
        let product = w * self.as_matrix() * w.transpose();
        SpdMatrix::new(SymmetricMatrix(symmetrized(&product)))
    }
}

/// Principal matrix logarithm `V diag(ln λ) Vᵀ`.
pub fn matrix_log(m: &SpdMatrix) -> SymmetricMatrix {
    m.eig.map_spectrum(f64::ln)
}

/// Matrix exponential `V diag(exp λ) Vᵀ` of a symmetric matrix.
///
/// The certificate of the result is the exponentiated spectrum, which is
/// strictly positive whenever it does not underflow.
pub fn matrix_exp(m: &SymmetricMatrix) -> Result<SpdMatrix> {
    let eig = eig_sym(m)?;
    let values: Vec<f64> = eig.eigenvalues.iter().map(|l| l.exp()).collect();
    if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(
            "matrix exponential under- or overflows in double precision",
        ));
    }
    Ok(SpdMatrix::from_spectrum(eig.eigenvectors, values))
}

pub fn matrix_sqrt(m: &SpdMatrix) -> SpdMatrix {
    let values = m.eig.eigenvalues.iter().map(|l| l.sqrt()).collect();
    SpdMatrix::from_spectrum(m.eig.eigenvectors.clone(), values)
}

pub fn matrix_invsqrt(m: &SpdMatrix) -> SpdMatrix {
    let values = m.eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()).collect();
    SpdMatrix::from_spectrum(m.eig.eigenvectors.clone(), values)
}

/// Clips the spectrum of `m` from below at `floor`.
///
/// Returns `m` unchanged (entry for entry) when it is already SPD with every
/// eigenvalue at or above `floor`, which makes the projection idempotent.
/// The effective floor is never below twice the certification threshold of
/// the clipped spectrum.
pub fn nearest_spd(m: &SymmetricMatrix, floor: f64) -> Result<SpdMatrix> {
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(Error::invalid(format!(
            "eigenvalue floor must be positive and finite, got {floor}"
        )));
    }
    let eig = eig_sym(m)?;
    let max = eig.max_eigenvalue();
    let dim = m.dim();
    let floor = floor.max(2.0 * spd_threshold(max));
    // Eigenvalues of an already-clipped matrix come back within rounding of the floor.
    let slack = 64.0 * dim as f64 * f64::EPSILON * max.abs().max(eig.min_eigenvalue().abs());
    let min = eig.min_eigenvalue();
    if min >= floor - slack && min > spd_threshold(max) {
        return Ok(SpdMatrix {
            base: m.clone(),
            eig,
        });
    }
    let values = eig.eigenvalues.iter().map(|&l| l.max(floor)).collect();
    Ok(SpdMatrix::from_spectrum(eig.eigenvectors, values))
}

/// Random symmetric matrix with independent standard normal entries on and
/// above the diagonal.
pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> SymmetricMatrix {
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let v: f64 = rng.sample(StandardNormal);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    SymmetricMatrix(m)
}

/// Random SPD matrix `A Aᵀ / dim + 0.1 I` with Gaussian `A`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> SpdMatrix {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut m = &a * a.transpose() / dim as f64;
    for i in 0..dim {
        m[(i, i)] += 0.1;
    }
    SpdMatrix::new(SymmetricMatrix(symmetrized(&m))).expect("A Aᵀ + 0.1 I is SPD")
}
