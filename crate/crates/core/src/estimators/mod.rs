//! Per-segment SPD estimation (sample covariance, Kendall rank correlation)
//! and per-subject aggregation into feature vectors.

pub mod kendall;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{
    mean_euclidean, mean_logeuclidean, mean_riemannian, upper_len, upper_vectorize, GeometryKind,
    KarcherConfig, TangentSpace,
};
use crate::signal::{segment, stack_bands, BandSpec, Centering, Recording, Segment};
use crate::spd::{nearest_spd, spd_threshold, SpdMatrix, SymmetricMatrix};
use kendall::{tau_counts, RankedSeries};

/// Relative eigenvalue floor used to repair Kendall matrices.
pub const KENDALL_FLOOR: f64 = 1e-6;

/// Measure of dependence between channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DependenceKind {
    #[serde(rename = "COV")]
    Covariance,
    #[serde(rename = "KEN")]
    Kendall,
}

impl DependenceKind {
    pub const ALL: [DependenceKind; 2] = [DependenceKind::Covariance, DependenceKind::Kendall];

    pub fn label(self) -> &'static str {
        match self {
            DependenceKind::Covariance => "COV",
            DependenceKind::Kendall => "KEN",
        }
    }
}

impl fmt::Display for DependenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DependenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cov" | "covariance" | "scm" => Ok(DependenceKind::Covariance),
            "ken" | "kendall" => Ok(DependenceKind::Kendall),
            _ => Err(Error::invalid(format!("unknown dependence measure '{s}'"))),
        }
    }
}

/// Spatial (`n × n`) or spatiofrequential (`bands·n × bands·n`) matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatrixDesign {
    #[serde(rename = "S")]
    Spatial,
    #[serde(rename = "SF")]
    Spatiofrequential,
}

impl MatrixDesign {
    pub const ALL: [MatrixDesign; 2] = [MatrixDesign::Spatiofrequential, MatrixDesign::Spatial];

    pub fn label(self) -> &'static str {
        match self {
            MatrixDesign::Spatial => "S",
            MatrixDesign::Spatiofrequential => "SF",
        }
    }

    /// Side length of the matrices for `n_channels` and `n_bands`.
    pub fn matrix_dim(self, n_channels: usize, n_bands: usize) -> usize {
        match self {
            MatrixDesign::Spatial => n_channels,
            MatrixDesign::Spatiofrequential => n_channels * n_bands,
        }
    }

    pub fn feature_len(self, n_channels: usize, n_bands: usize) -> usize {
        upper_len(self.matrix_dim(n_channels, n_bands))
    }
}

impl fmt::Display for MatrixDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MatrixDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "spatial" => Ok(MatrixDesign::Spatial),
            "sf" | "spatiofrequential" => Ok(MatrixDesign::Spatiofrequential),
            _ => Err(Error::invalid(format!("unknown matrix design '{s}'"))),
        }
    }
}

/// One subject's feature vector and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFeatures {
    pub subject_id: String,
    pub feature: Vec<f64>,
    pub geometry: GeometryKind,
    pub dependence: DependenceKind,
    pub design: MatrixDesign,
    pub covariates: Vec<(String, f64)>,
}

/// Floor for repairing rank-deficient covariance estimates.
fn covariance_floor(max_eig: f64) -> f64 {
    if max_eig > 0.0 {
        10.0 * spd_threshold(max_eig)
    } else {
        crate::spd::SPD_RELATIVE_THRESHOLD
    }
}

fn certify_or_repair(m: SymmetricMatrix) -> Result<SpdMatrix> {
    match SpdMatrix::new(m.clone()) {
        Ok(spd) => Ok(spd),
        Err(Error::NotPositiveDefinite { .. }) => {
            let max = crate::spd::eig_sym(&m)?.max_eigenvalue();
            nearest_spd(&m, covariance_floor(max))
        }
        Err(e) => Err(e),
    }
}

/// `X Xᵀ / (t − 1)`, repaired to SPD when rank deficient.
pub fn sample_covariance(seg: &Segment) -> Result<SpdMatrix> {
    let t = seg.len();
    if t < 2 {
        return Err(Error::invalid("covariance needs at least two samples"));
    }
    let x = &seg.data;
    let c = x * x.transpose() / (t as f64 - 1.0);
    certify_or_repair(SymmetricMatrix::symmetrize(&c)?)
}

/// Matrix of pairwise Kendall τ-b coefficients with unit diagonal (not yet repaired).
pub fn kendall_raw(seg: &Segment) -> Result<SymmetricMatrix> {
    let n = seg.n_channels();
    if seg.len() < 2 {
        return Err(Error::invalid("rank correlation needs at least two samples"));
    }
    let ranked: Vec<RankedSeries> = (0..n).map(|i| RankedSeries::new(&seg.row(i))).collect();
    if let Some(channel) = ranked.iter().position(RankedSeries::is_constant) {
        return Err(Error::DegenerateChannel { channel });
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let taus: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            tau_counts(&ranked[i], &ranked[j])?
                .tau_b()
                .ok_or(Error::DegenerateChannel { channel: i })
        })
        .collect();
    let mut m = DMatrix::identity(n, n);
    for (&(i, j), tau) in pairs.iter().zip(taus) {
        let tau = tau?;
        m[(i, j)] = tau;
        m[(j, i)] = tau;
    }
    SymmetricMatrix::new(m)
}

/// Kendall τ-b matrix, projected to SPD with an eigenvalue floor of
/// `1e-6 · λ_max` and rescaled to unit diagonal.
pub fn kendall_matrix(seg: &Segment) -> Result<SpdMatrix> {
    let raw = kendall_raw(seg)?;
    let max = crate::spd::eig_sym(&raw)?.max_eigenvalue();
    let projected = nearest_spd(&raw, KENDALL_FLOOR * max)?;
    if projected.as_matrix() == raw.as_matrix() {
        return Ok(projected);
    }
    let m = projected.as_matrix();
    let scale: Vec<f64> = (0..m.nrows()).map(|i| 1.0 / m[(i, i)].sqrt()).collect();
    let normalized = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        if i == j {
            1.0
        } else {
            m[(i, j)] * scale[i] * scale[j]
        }
    });
    SpdMatrix::new(SymmetricMatrix::symmetrize(&normalized)?)
}

/// Estimator for one dependence measure.
pub fn estimate(seg: &Segment, dep: DependenceKind) -> Result<SpdMatrix> {
    match dep {
        DependenceKind::Covariance => sample_covariance(seg),
        DependenceKind::Kendall => kendall_matrix(seg),
    }
}

/// One SPD matrix per segment of the recording.
pub fn build_subject_matrices(
    rec: &Recording,
    dep: DependenceKind,
    design: MatrixDesign,
    bands: &[BandSpec],
    seconds: f64,
    centering: Centering,
) -> Result<Vec<SpdMatrix>> {
    if design == MatrixDesign::Spatiofrequential {
        if bands.is_empty() {
            return Err(Error::invalid("spatiofrequential design needs at least one band"));
        }
        for b in bands {
            b.validate(rec.samples_per_second())?;
        }
    }
    let segments = segment(rec, seconds, centering)?;
    segments
        .par_iter()
        .map(|seg| match design {
            MatrixDesign::Spatial => estimate(seg, dep),
            MatrixDesign::Spatiofrequential => estimate(&stack_bands(seg, bands)?, dep),
        })
        .collect()
}

/// Subject-level mean with the geometry's own averaging rule.
pub fn subject_mean(matrices: &[SpdMatrix], geometry: GeometryKind, karcher: &KarcherConfig) -> Result<SpdMatrix> {
    match geometry {
        GeometryKind::Euclidean => mean_euclidean(matrices),
        GeometryKind::LogEuclidean => mean_logeuclidean(matrices),
        GeometryKind::Riemannian => Ok(mean_riemannian(matrices, karcher)?.mean),
    }
}

/// Group reference `M_G` over subject means. For the Euclidean geometry this
/// is the arithmetic mean, which is reported but never used to transform features.
pub fn fit_group_reference(
    subject_means: &[SpdMatrix],
    geometry: GeometryKind,
    cfg: &KarcherConfig,
) -> Result<SpdMatrix> {
    subject_mean(subject_means, geometry, cfg)
}

/// Feature vector of a subject mean: `upper(M_z)` for the Euclidean geometry,
/// the tangent vector at `reference` otherwise.
pub fn feature_from_mean(
    mean: &SpdMatrix,
    geometry: GeometryKind,
    reference: Option<&TangentSpace>,
    isometric: bool,
) -> Result<Vec<f64>> {
    match (geometry, reference) {
        (GeometryKind::Euclidean, None) => Ok(upper_vectorize(mean.as_symmetric(), isometric)),
        (GeometryKind::Euclidean, Some(_)) => Err(Error::invalid(
            "the Euclidean geometry takes no tangent reference",
        )),
        (_, Some(space)) => space.map(mean),
        (_, None) => Err(Error::invalid(format!(
            "geometry {geometry} needs a group reference"
        ))),
    }
}

/// Subject mean followed by [`feature_from_mean`].
pub fn subject_feature(
    matrices: &[SpdMatrix],
    geometry: GeometryKind,
    group_reference: Option<&SpdMatrix>,
    isometric: bool,
    karcher: &KarcherConfig,
) -> Result<Vec<f64>> {
    if matrices.is_empty() {
        return Err(Error::invalid("no matrices to summarize"));
    }
    let space = group_reference.map(|r| TangentSpace::new(r.clone(), isometric));
    if geometry != GeometryKind::Euclidean && space.is_none() || geometry == GeometryKind::Euclidean && space.is_some() {
        return Err(Error::invalid(format!(
            "geometry {geometry} and the presence of a group reference disagree"
        )));
    }
    let mean = subject_mean(matrices, geometry, karcher)?;
    feature_from_mean(&mean, geometry, space.as_ref(), isometric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::bandpass;
    use crate::spd::{eig_sym, random_spd};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_segment(seed: u64, n: usize, t: usize) -> Segment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Segment {
            data: DMatrix::from_fn(n, t, |_, _| StandardNormal.sample(&mut rng)),
            samples_per_second: 64.0,
        }
    }

    /// Direct O(t²) pair enumeration.
    fn tau_brute(x: &[f64], y: &[f64]) -> f64 {
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0u64, 0u64);
        for i in 0..x.len() {
            for j in (i + 1)..x.len() {
                let dx = x[i] - x[j];
                let dy = y[i] - y[j];
                if dx == 0.0 && dy == 0.0 {
                    continue;
                } else if dx == 0.0 {
                    tx += 1;
                } else if dy == 0.0 {
                    ty += 1;
                } else if (dx > 0.0) == (dy > 0.0) {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
        let untied_x = (c + d) as u64 + ty;
        let untied_y = (c + d) as u64 + tx;
        (c - d) as f64 / ((untied_x as f64) * (untied_y as f64)).sqrt()
    }

    #[test]
    fn covariance_of_rank_one_segment_is_repaired() {
        let seg = Segment {
            data: DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]),
            samples_per_second: 1.0,
        };
        let c = sample_covariance(&seg).unwrap();
        let m = c.as_matrix();
        assert!((m[(0, 0)] - 2.0).abs() < 1e-8 && (m[(0, 1)] - 2.0).abs() < 1e-8);
        assert!(c.min_eigenvalue() > 0.0);
        assert!(c.min_eigenvalue() > spd_threshold(c.max_eigenvalue()));
    }

    #[test]
    fn covariance_of_white_noise_is_near_identity() {
        let t = 100_000;
        let seg = noise_segment(4, 3, t);
        let c = sample_covariance(&seg).unwrap();
        let bound = 3.0 / (t as f64).sqrt();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((c.as_matrix()[(i, j)] - expected).abs() < bound * 3.0_f64.max(1.0));
            }
        }
    }

    #[test]
    fn zero_segment_repairs_to_scaled_identity() {
        let seg = Segment { data: DMatrix::zeros(3, 10), samples_per_second: 1.0 };
        let c = sample_covariance(&seg).unwrap();
        let m = c.as_matrix();
        assert!(m[(0, 0)] > 0.0);
        assert_eq!(m[(0, 0)], m[(1, 1)]);
        assert_eq!(m[(0, 1)], 0.0);
        assert!(sample_covariance(&Segment { data: DMatrix::zeros(3, 1), samples_per_second: 1.0 }).is_err());
    }

    #[test]
    fn covariance_matches_direct_summation() {
        let seg = noise_segment(8, 5, 300);
        let c = sample_covariance(&seg).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..300 {
                    s += seg.data[(i, k)] * seg.data[(j, k)];
                }
                s /= 299.0;
                assert!((c.as_matrix()[(i, j)] - s).abs() <= 1e-12 * s.abs().max(1.0));
            }
        }
    }

    #[test]
    fn kendall_examples_and_degenerate_channel() {
        let seg = Segment {
            data: DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 3.0, 4.0, 1.0, 3.0, 2.0, 4.0, -1.0, -2.0, -3.0, -4.0]),
            samples_per_second: 1.0,
        };
        let k = kendall_raw(&seg).unwrap();
        assert!((k.get(0, 1) - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(k.get(0, 2), -1.0);
        assert_eq!(k.get(0, 0), 1.0);

        let flat = Segment {
            data: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0]),
            samples_per_second: 1.0,
        };
        assert!(matches!(kendall_matrix(&flat), Err(Error::DegenerateChannel { channel: 1 })));
    }

    #[test]
    fn kendall_repair_keeps_unit_diagonal() {
        // y = x and z = -x force a singular τ matrix
        let seg = Segment {
            data: DMatrix::from_row_slice(3, 5, &[1.0, 2.0, 3.0, 4.0, 5.0, 1.0, 2.0, 3.0, 4.0, 5.0, 2.0, 1.0, 4.0, 3.0, 5.0]),
            samples_per_second: 1.0,
        };
        let k = kendall_matrix(&seg).unwrap();
        for i in 0..3 {
            assert_eq!(k.as_matrix()[(i, i)], 1.0);
        }
        assert!(eig_sym(k.as_symmetric()).unwrap().min_eigenvalue() > 0.0);
    }

    #[test]
    fn kendall_is_monotone_invariant_covariance_is_not() {
        let seg = noise_segment(3, 4, 200);
        let mut warped = seg.clone();
        for v in warped.data.iter_mut() {
            *v = v.powi(3) + 2.0 * v.exp();
        }
        assert_eq!(kendall_matrix(&seg).unwrap().as_matrix(), kendall_matrix(&warped).unwrap().as_matrix());
        assert_ne!(sample_covariance(&seg).unwrap().as_matrix(), sample_covariance(&warped).unwrap().as_matrix());
    }

    #[test]
    fn scaling_contrast() {
        let seg = noise_segment(6, 3, 100);
        let mut scaled = seg.clone();
        scaled.data *= -2.0;
        let c = sample_covariance(&seg).unwrap();
        let c2 = sample_covariance(&scaled).unwrap();
        assert_eq!(c2.as_matrix(), &(c.as_matrix() * 4.0));
        let mut positive = seg.clone();
        positive.data *= 2.0;
        assert_eq!(kendall_matrix(&seg).unwrap().as_matrix(), kendall_matrix(&positive).unwrap().as_matrix());
    }

    #[test]
    fn single_band_spatiofrequential_equals_spatial_of_filtered() {
        let seg = noise_segment(9, 3, 512);
        let band = BandSpec::new("alpha", 8.0, 13.0);
        let sf = estimate(&stack_bands(&seg, std::slice::from_ref(&band)).unwrap(), DependenceKind::Covariance).unwrap();
        let s = sample_covariance(&bandpass(&seg, &band).unwrap()).unwrap();
        assert_eq!(sf.as_matrix(), s.as_matrix());
    }

    fn recording(seed: u64, n: usize, seconds: usize, fs: f64) -> Recording {
        let seg = noise_segment(seed, n, seconds * fs as usize);
        Recording::with_default_names(fs, seg.data, "EC").unwrap()
    }

    #[test]
    fn subject_matrix_shapes() {
        let rec = recording(1, 19, 180, 32.0);
        let bands = vec![BandSpec::new("a", 2.0, 4.0), BandSpec::new("b", 4.0, 8.0), BandSpec::new("c", 8.0, 13.0), BandSpec::new("d", 13.0, 15.0)];
        let s = build_subject_matrices(&rec, DependenceKind::Covariance, MatrixDesign::Spatial, &bands, 4.0, Centering::PerChannel).unwrap();
        assert_eq!(s.len(), 45);
        assert_eq!(s[0].dim(), 19);
        let short = recording(2, 19, 5, 32.0);
        let sf = build_subject_matrices(&short, DependenceKind::Covariance, MatrixDesign::Spatiofrequential, &bands, 4.0, Centering::PerChannel).unwrap();
        assert_eq!(sf.len(), 1);
        assert_eq!(sf[0].dim(), 76);
        assert_eq!(MatrixDesign::Spatial.feature_len(19, 4), 190);
        assert_eq!(MatrixDesign::Spatiofrequential.feature_len(19, 4), 2926);
    }

    #[test]
    fn subject_feature_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let c = random_spd(&mut rng, 4);
        let cfg = KarcherConfig::default();
        let f = subject_feature(std::slice::from_ref(&c), GeometryKind::Euclidean, None, false, &cfg).unwrap();
        assert_eq!(f, upper_vectorize(c.as_symmetric(), false));

        let f = subject_feature(std::slice::from_ref(&c), GeometryKind::LogEuclidean, Some(&c), true, &cfg).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-12));

        let a = SpdMatrix::from_diagonal(&[1.0, 4.0, 0.5]).unwrap();
        let b = SpdMatrix::from_diagonal(&[3.0, 0.2, 2.0]).unwrap();
        let r = SpdMatrix::from_diagonal(&[2.0, 1.0, 1.5]).unwrap();
        let pair = [a, b];
        let log = subject_feature(&pair, GeometryKind::LogEuclidean, Some(&r), true, &cfg).unwrap();
        let rie = subject_feature(&pair, GeometryKind::Riemannian, Some(&r), true, &cfg).unwrap();
        for (x, y) in log.iter().zip(&rie) {
            assert!((x - y).abs() <= 1e-8);
        }

        assert!(subject_feature(&pair, GeometryKind::Riemannian, None, true, &cfg).is_err());
        assert!(subject_feature(&pair, GeometryKind::Euclidean, Some(&r), true, &cfg).is_err());
    }

    #[test]
    fn group_reference_of_identities_is_identity() {
        let ids = vec![SpdMatrix::identity(3); 4];
        for g in GeometryKind::ALL {
            let r = fit_group_reference(&ids, g, &KarcherConfig::default()).unwrap();
            assert!((r.as_matrix() - DMatrix::<f64>::identity(3, 3)).norm() < 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn fast_kendall_equals_brute_force(seed in any::<u64>(), t in 2usize..120, levels in 2u32..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // quantized samples guarantee ties
            let x: Vec<f64> = (0..t).map(|_| rng.random_range(0..levels) as f64).collect();
            let y: Vec<f64> = (0..t).map(|_| rng.random_range(0..levels) as f64).collect();
            let rx = RankedSeries::new(&x);
            let ry = RankedSeries::new(&y);
            prop_assume!(!rx.is_constant() && !ry.is_constant());
            let fast = tau_counts(&rx, &ry).unwrap().tau_b().unwrap();
            prop_assert_eq!(fast, tau_brute(&x, &y));
        }
    }
}
