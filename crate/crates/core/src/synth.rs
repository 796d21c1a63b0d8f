//! Seeded synthetic cohorts with planted ground truth.
//!
//! Each subject's recording is a sum over bands of `n` independent
//! band-limited unit-variance oscillators mixed through `Σ_{z,b}^{1/2}`, plus
//! white sensor noise. The band covariance `Σ_{z,b} = G_b^{1/2} exp(S_{z,b}) G_b^{1/2}`
//! perturbs a common group matrix `G_b` along a random tangent direction
//! `S_{z,b}`. The target mixes a linear function of a few tangent
//! coordinates, covariate effects and noise in fixed variance proportions.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{upper_len, upper_unvectorize};
use crate::regression::DesignMatrix;
use crate::signal::{eeg_bands, BandPassFilter, BandSpec, Recording};
use crate::spd::{matrix_exp, matrix_sqrt, SpdMatrix};

/// Share of the non-signal target variance carried by covariates.
pub const COVARIATE_SHARE: f64 = 0.2;

/// Standard 10-20 montage in the order used for 19-channel cohorts.
pub const MONTAGE_10_20: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1",
    "O2",
];

const AGE_RANGE: (f64, f64) = (55.0, 85.0);

/// Regression target flavour; selects paradigm, duration default and covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    BrainVolLike,
    HippVolLike,
}

impl TargetKind {
    pub fn label(self) -> &'static str {
        match self {
            TargetKind::BrainVolLike => "BrainVol",
            TargetKind::HippVolLike => "HippVol",
        }
    }

    pub fn paradigm(self) -> &'static str {
        match self {
            TargetKind::BrainVolLike => "EC",
            TargetKind::HippVolLike => "WLT",
        }
    }

    pub fn default_duration(self) -> f64 {
        match self {
            TargetKind::BrainVolLike => 180.0,
            TargetKind::HippVolLike => 140.0,
        }
    }

    /// Covariates entering the target (and the regression design).
    pub fn covariate_names(self) -> Vec<String> {
        let mut names = vec!["age".to_string(), "gender".to_string()];
        if self == TargetKind::HippVolLike {
            names.push("field_strength".into());
        }
        names
    }

    fn offset_and_scale(self) -> (f64, f64) {
        match self {
            TargetKind::BrainVolLike => (0.72, 2e-3),
            TargetKind::HippVolLike => (4.8e-3, 2e-4),
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "brainvol" | "brainvollike" | "brain" => Ok(TargetKind::BrainVolLike),
            "hippvol" | "hippvollike" | "hipp" => Ok(TargetKind::HippVolLike),
            _ => Err(Error::invalid(format!("unknown target kind '{s}'"))),
        }
    }
}

/// Parameters of a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub n_channels: usize,
    pub samples_per_second: f64,
    pub duration_seconds: f64,
    pub seed: u64,
    /// Fraction of target variance explained by the planted EEG signal.
    pub effect_size: f64,
    pub target_kind: TargetKind,
    /// Expected Frobenius norm of each subject's tangent perturbation.
    pub disturbance: f64,
    /// Standard deviation of white sensor noise.
    pub sensor_noise: f64,
}

impl CohortSpec {
    pub fn new(n_subjects: usize, seed: u64, effect_size: f64, target_kind: TargetKind) -> Self {
        CohortSpec {
            n_subjects,
            n_channels: 19,
            samples_per_second: 256.0,
            duration_seconds: target_kind.default_duration(),
            seed,
            effect_size,
            target_kind,
            disturbance: 3.0,
            sensor_noise: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 20 {
            return Err(Error::invalid(format!("a cohort needs at least 20 subjects, got {}", self.n_subjects)));
        }
        if self.n_channels < 2 {
            return Err(Error::invalid("a cohort needs at least two channels"));
        }
        if !(0.0..=1.0).contains(&self.effect_size) {
            return Err(Error::invalid(format!("effect_size must lie in [0, 1], got {}", self.effect_size)));
        }
        if !(self.disturbance > 0.0 && self.disturbance.is_finite()) {
            return Err(Error::invalid("disturbance must be positive"));
        }
        if !(self.sensor_noise >= 0.0 && self.sensor_noise.is_finite()) {
            return Err(Error::invalid("sensor_noise must be non-negative"));
        }
        for band in eeg_bands() {
            band.validate(self.samples_per_second)?;
        }
        if !(self.duration_seconds >= 4.0) {
            return Err(Error::invalid("duration must be at least 4 s"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_seconds * self.samples_per_second).round() as usize
    }

    pub fn channel_names(&self) -> Vec<String> {
        if self.n_channels == MONTAGE_10_20.len() {
            MONTAGE_10_20.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.n_channels).map(|i| format!("ch{i}")).collect()
        }
    }

    fn tangent_sd(&self) -> f64 {
        self.disturbance / (upper_len(self.n_channels) as f64).sqrt()
    }
}

/// Subject covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub age: f64,
    pub gender: f64,
    pub field_strength: f64,
}

impl Covariates {
    pub fn values(&self, kind: TargetKind) -> Vec<f64> {
        let mut v = vec![self.age, self.gender];
        if kind == TargetKind::HippVolLike {
            v.push(self.field_strength);
        }
        v
    }
}

/// One planted tangent coordinate: band, matrix entry, weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedTerm {
    pub band: usize,
    pub row: usize,
    pub col: usize,
    pub weight: f64,
}

impl PlantedTerm {
    pub fn name(&self, bands: &[BandSpec]) -> String {
        format!("{}_{}_{}", bands[self.band].name, self.row, self.col)
    }
}

/// Everything needed to regenerate and score a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: CohortSpec,
    pub bands: Vec<BandSpec>,
    pub subject_ids: Vec<String>,
    /// Row-major of each group band matrix `G_b`.
    pub group_matrices: Vec<Vec<f64>>,
    /// Per subject, per band: isometric upper vector of `S_{z,b}`.
    pub tangent: Vec<Vec<Vec<f64>>>,
    pub planted: Vec<PlantedTerm>,
    /// Standard deviation of the raw planted signal (analytic).
    pub signal_sd: f64,
    pub covariate_weights: Vec<f64>,
    pub offset: f64,
    pub scale: f64,
    /// Standard deviation of the target noise term.
    pub noise_sd: f64,
    pub covariates: Vec<Covariates>,
    pub targets: Vec<f64>,
}

impl GroundTruth {
    pub fn covariate_names(&self) -> Vec<String> {
        self.spec.target_kind.covariate_names()
    }

    pub fn covariate_matrix(&self) -> DMatrix<f64> {
        let kind = self.spec.target_kind;
        let q = kind.covariate_names().len();
        DMatrix::from_fn(self.covariates.len(), q, |i, j| self.covariates[i].values(kind)[j])
    }

    /// Matrix entry `S_{z,b}[row, col]` of planted term `t` for subject `z`.
    pub fn planted_value(&self, z: usize, t: &PlantedTerm) -> f64 {
        let n = self.spec.n_channels;
        let (i, j) = (t.row.min(t.col), t.row.max(t.col));
        let u = self.tangent[z][t.band][upper_offset(n, i) + (j - i)];
        if i == j {
            u
        } else {
            u / std::f64::consts::SQRT_2
        }
    }

    pub fn band_covariance(&self, z: usize, b: usize) -> Result<SpdMatrix> {
        let n = self.spec.n_channels;
        let g = SpdMatrix::from_matrix(DMatrix::from_row_slice(n, n, &self.group_matrices[b]))?;
        let s = upper_unvectorize(&self.tangent[z][b], n, true)?;
        let root = matrix_sqrt(&g);
        let e = matrix_exp(&s)?;
        let m = root.as_matrix() * e.as_matrix() * root.as_matrix();
        SpdMatrix::from_matrix((&m + m.transpose()) * 0.5)
    }

    /// Covariance of the raw signal implied by the mixing model:
    /// `Σ_b Σ_{z,b} + σ² I`.
    pub fn implied_covariance(&self, z: usize) -> Result<DMatrix<f64>> {
        let n = self.spec.n_channels;
        let mut total = DMatrix::identity(n, n) * self.spec.sensor_noise.powi(2);
        for b in 0..self.bands.len() {
            total += self.band_covariance(z, b)?.as_matrix();
        }
        Ok(total)
    }
}

fn upper_offset(n: usize, i: usize) -> usize {
    i * n - i * i.saturating_sub(1) / 2
}

/// A generated cohort held in memory.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub recordings: Vec<Recording>,
    pub truth: GroundTruth,
}

impl Cohort {
    pub fn targets(&self) -> &[f64] {
        &self.truth.targets
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of random stream `stream` for subject `index`.
pub fn subject_seed(cohort_seed: u64, index: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(cohort_seed) ^ index) ^ stream)
}

const GROUP_STREAM: u64 = u64::MAX;
const PARAM_STREAM: u64 = 0;
const SIGNAL_STREAM: u64 = 1;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Unit-variance band-limited noise: white noise through the band's
/// zero-phase Butterworth filter, rescaled to population variance 1.
pub fn oscillator(rng: &mut ChaCha8Rng, filter: &BandPassFilter, len: usize) -> Vec<f64> {
    let white: Vec<f64> = (0..len).map(|_| normal(rng)).collect();
    let mut y = filter.filtfilt(&white);
    let mean = y.iter().sum::<f64>() / len as f64;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64).sqrt();
    for v in &mut y {
        *v = (*v - mean) / sd;
    }
    y
}

/// Draws the ground truth (no signals) for `spec`.
pub fn ground_truth(spec: &CohortSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let n = spec.n_channels;
    let bands = eeg_bands();
    let nb = bands.len();
    let kind = spec.target_kind;

    let mut group_rng = ChaCha8Rng::seed_from_u64(subject_seed(spec.seed, GROUP_STREAM, 0));
    let band_power = [2.0, 1.5, 3.0, 1.0];
    let mut group_matrices = Vec::with_capacity(nb);
    for power in band_power.iter().take(nb) {
        let a = DMatrix::from_fn(n, n, |_, _| normal(&mut group_rng));
        let g = (&a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5) * *power;
        let g = (&g + g.transpose()) * 0.5;
        let mut row_major = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                row_major.push(g[(i, j)]);
            }
        }
        group_matrices.push(row_major);
    }

    // one term per band, alternating log band power and coupling
    let mut planted = Vec::with_capacity(nb);
    for band in 0..nb {
        let row = group_rng.random_range(0..n);
        let col = if band % 2 == 0 {
            row
        } else {
            (row + group_rng.random_range(1..n)) % n
        };
        let magnitude = group_rng.random_range(0.75..1.25);
        let sign = if group_rng.random::<bool>() { 1.0 } else { -1.0 };
        planted.push(PlantedTerm { band, row: row.min(col), col: row.max(col), weight: sign * magnitude });
    }

    let covariate_weights: Vec<f64> = match kind {
        TargetKind::BrainVolLike => vec![-1.0, 0.5],
        TargetKind::HippVolLike => vec![-1.0, 0.4, 0.6],
    };

    let tau = spec.tangent_sd();
    let d = upper_len(n);
    let per_subject: Vec<(Vec<Vec<f64>>, Covariates, f64)> = (0..spec.n_subjects as u64)
        .into_par_iter()
        .map(|z| {
            let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(spec.seed, z, PARAM_STREAM));
            let tangent: Vec<Vec<f64>> = (0..nb).map(|_| (0..d).map(|_| tau * normal(&mut rng)).collect()).collect();
            let cov = Covariates {
                age: rng.random_range(AGE_RANGE.0..AGE_RANGE.1),
                gender: if rng.random::<bool>() { 1.0 } else { 0.0 },
                field_strength: if rng.random::<bool>() { 3.0 } else { 1.5 },
            };
            (tangent, cov, normal(&mut rng))
        })
        .collect();

    let mut truth = GroundTruth {
        spec: spec.clone(),
        bands,
        subject_ids: (0..spec.n_subjects).map(|z| format!("sub-{z:03}")).collect(),
        group_matrices,
        tangent: per_subject.iter().map(|p| p.0.clone()).collect(),
        planted,
        signal_sd: 0.0,
        covariate_weights,
        offset: kind.offset_and_scale().0,
        scale: kind.offset_and_scale().1,
        noise_sd: 0.0,
        covariates: per_subject.iter().map(|p| p.1).collect(),
        targets: Vec::new(),
    };

    // isometric coordinates: diagonal entries are u, off-diagonal entries u/√2,
    // so each term's raw value has variance τ² (diagonal) or τ²/2 (coupling)
    let signal_var: f64 = truth
        .planted
        .iter()
        .map(|t| t.weight.powi(2) * if t.row == t.col { tau * tau } else { tau * tau / 2.0 })
        .sum();
    truth.signal_sd = signal_var.sqrt();
    let age_sd = (AGE_RANGE.1 - AGE_RANGE.0) / 12f64.sqrt();
    let age_mean = (AGE_RANGE.0 + AGE_RANGE.1) / 2.0;
    let cov_norm = truth.covariate_weights.iter().map(|w| w * w).sum::<f64>().sqrt();

    let e = spec.effect_size;
    let w_signal = e.sqrt();
    let w_cov = ((1.0 - e) * COVARIATE_SHARE).sqrt();
    let w_noise = ((1.0 - e) * (1.0 - COVARIATE_SHARE)).sqrt();
    truth.noise_sd = truth.scale * w_noise;

    let targets: Vec<f64> = (0..spec.n_subjects)
        .map(|z| {
            let g: f64 = truth.planted.iter().map(|t| t.weight * truth.planted_value(z, t)).sum::<f64>() / truth.signal_sd;
            let c = &truth.covariates[z];
            let standardized = [
                (c.age - age_mean) / age_sd,
                (c.gender - 0.5) / 0.5,
                (c.field_strength - 2.25) / 0.75,
            ];
            let cov: f64 = truth
                .covariate_weights
                .iter()
                .zip(standardized)
                .map(|(w, s)| w * s)
                .sum::<f64>()
                / cov_norm;
            truth.offset + truth.scale * (w_signal * g + w_cov * cov + w_noise * per_subject[z].2)
        })
        .collect();
    truth.targets = targets;
    Ok(truth)
}

/// Recording of subject `z`, regenerated deterministically from the truth.
pub fn subject_recording(truth: &GroundTruth, z: usize) -> Result<Recording> {
    let spec = &truth.spec;
    if z >= spec.n_subjects {
        return Err(Error::invalid(format!("subject index {z} out of range")));
    }
    let n = spec.n_channels;
    let t = spec.n_samples();
    let fs = spec.samples_per_second;
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(spec.seed, z as u64, SIGNAL_STREAM));
    let mut data = DMatrix::zeros(n, t);
    for (b, band) in truth.bands.iter().enumerate() {
        let filter = BandPassFilter::butterworth(band.low, band.high, fs);
        let mut sources = DMatrix::zeros(n, t);
        for i in 0..n {
            let s = oscillator(&mut rng, &filter, t);
            for (k, v) in s.into_iter().enumerate() {
                sources[(i, k)] = v;
            }
        }
        let mixing = matrix_sqrt(&truth.band_covariance(z, b)?);
        data += mixing.as_matrix() * sources;
    }
    if spec.sensor_noise > 0.0 {
        for v in data.iter_mut() {
            *v += spec.sensor_noise * normal(&mut rng);
        }
    }
    Recording::new(spec.channel_names(), fs, data, spec.target_kind.paradigm())
}

/// Ground truth plus every recording.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    let truth = ground_truth(spec)?;
    let recordings = (0..spec.n_subjects)
        .into_par_iter()
        .map(|z| subject_recording(&truth, z))
        .collect::<Result<_>>()?;
    Ok(Cohort { recordings, truth })
}

/// The generating features (planted tangent coordinates) plus covariates,
/// with the targets as response.
pub fn oracle_features(truth: &GroundTruth) -> Result<DesignMatrix> {
    let n = truth.subject_ids.len();
    let kind = truth.spec.target_kind;
    let k = truth.planted.len();
    let q = kind.covariate_names().len();
    let mut x = DMatrix::zeros(n, k + q);
    for z in 0..n {
        for (c, t) in truth.planted.iter().enumerate() {
            x[(z, c)] = truth.planted_value(z, t);
        }
        for (c, v) in truth.covariates[z].values(kind).into_iter().enumerate() {
            x[(z, k + c)] = v;
        }
    }
    let mut names: Vec<String> = truth.planted.iter().map(|t| t.name(&truth.bands)).collect();
    names.extend(kind.covariate_names());
    DesignMatrix::new(x, names, truth.targets.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{repeat_cv, CvConfig, CvDataset, FeatureSource};
    use nalgebra::Complex;

    fn small(seed: u64, effect: f64) -> CohortSpec {
        CohortSpec {
            n_channels: 4,
            samples_per_second: 64.0,
            duration_seconds: 20.0,
            ..CohortSpec::new(20, seed, effect, TargetKind::BrainVolLike)
        }
    }

    fn oracle_dataset(truth: &GroundTruth) -> CvDataset {
        let d = oracle_features(truth).unwrap();
        CvDataset::new(
            truth.subject_ids.clone(),
            d.response().to_vec(),
            vec![],
            DMatrix::zeros(d.n_rows(), 0),
            FeatureSource::Fixed { names: d.columns().to_vec(), values: d.x().clone() },
        )
        .unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(CohortSpec::new(5, 0, 0.5, TargetKind::BrainVolLike).validate().is_err());
        assert!(CohortSpec::new(20, 0, 1.5, TargetKind::BrainVolLike).validate().is_err());
        assert!(CohortSpec::new(20, 0, 0.5, TargetKind::HippVolLike).validate().is_ok());
        let slow = CohortSpec { samples_per_second: 20.0, ..small(0, 0.5) };
        assert!(slow.validate().is_err());
        assert_eq!(CohortSpec::new(20, 0, 0.5, TargetKind::HippVolLike).duration_seconds, 140.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_cohort(&small(3, 0.5)).unwrap();
        let b = generate_cohort(&small(3, 0.5)).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.recordings, b.recordings);
        let c = generate_cohort(&small(4, 0.5)).unwrap();
        assert_ne!(a.truth.targets, c.truth.targets);
        assert_eq!(a.recordings[0].n_channels(), 4);
        assert_eq!(a.recordings[0].n_samples(), 1280);
        assert_eq!(ground_truth(&CohortSpec::new(20, 1, 0.5, TargetKind::BrainVolLike)).unwrap().bands.len(), 4);
    }

    #[test]
    fn truth_round_trips_through_json() {
        let t = ground_truth(&small(5, 0.3)).unwrap();
        let back: GroundTruth = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn planted_terms_cover_powers_and_couplings() {
        let t = ground_truth(&CohortSpec::new(20, 8, 0.5, TargetKind::HippVolLike)).unwrap();
        assert_eq!(t.planted.len(), 4);
        assert_eq!(t.planted.iter().filter(|p| p.row == p.col).count(), 2);
        assert_eq!(t.covariate_names(), vec!["age", "gender", "field_strength"]);
        assert!(t.covariates.iter().all(|c| c.field_strength == 1.5 || c.field_strength == 3.0));
    }

    #[test]
    fn target_variance_matches_scale() {
        let spec = CohortSpec { n_subjects: 4000, ..small(9, 0.6) };
        let t = ground_truth(&spec).unwrap();
        let n = t.targets.len() as f64;
        let mean = t.targets.iter().sum::<f64>() / n;
        let sd = (t.targets.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd / t.scale - 1.0).abs() < 0.05, "{}", sd / t.scale);
        assert!((t.noise_sd - t.scale * (0.4f64 * 0.8).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sample_covariance_converges_to_mixing_model() {
        let durations = [40.0, 160.0, 640.0];
        let mut errors = Vec::new();
        for d in durations {
            let mut err = 0.0;
            for seed in 0..4 {
                let spec = CohortSpec { duration_seconds: d, ..small(100 + seed, 0.5) };
                let truth = ground_truth(&spec).unwrap();
                let rec = subject_recording(&truth, 0).unwrap();
                let x = rec.data();
                let c = x * x.transpose() / x.ncols() as f64;
                let implied = truth.implied_covariance(0).unwrap();
                err += (&c - &implied).norm() / implied.norm();
            }
            errors.push(err / 4.0);
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 1.4 && ratio < 2.9, "{errors:?}");
        }
    }

    #[test]
    fn oscillator_power_stays_in_band() {
        let fs = 64.0;
        let len = 2048;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for band in eeg_bands() {
            let filter = BandPassFilter::butterworth(band.low, band.high, fs);
            let s = oscillator(&mut rng, &filter, len);
            let (mut inside, mut total) = (0.0, 0.0);
            for k in 1..len / 2 {
                let w = -2.0 * std::f64::consts::PI * k as f64 / len as f64;
                let coef: Complex<f64> = s.iter().enumerate().map(|(t, v)| Complex::from_polar(*v, w * t as f64)).sum();
                let p = coef.norm_sqr();
                let f = k as f64 * fs / len as f64;
                total += p;
                if f >= band.low && f <= band.high {
                    inside += p;
                }
            }
            assert!(inside / total >= 0.8, "{}: {}", band.name, inside / total);
        }
    }

    #[test]
    fn noiseless_oracle_is_exact() {
        let truth = ground_truth(&CohortSpec { n_subjects: 60, ..small(11, 1.0) }).unwrap();
        let cfg = CvConfig { lambda_ratio: 1e-9, n_lambdas: 60, tolerance: 1e-12, ..CvConfig::default() };
        let r = repeat_cv(&oracle_dataset(&truth), 1, 0, &cfg).unwrap();
        assert!(r.summary.max <= 1e-6, "{:?}", r.summary);
    }

    #[test]
    fn oracle_reaches_noise_floor() {
        let mut ratio = 0.0;
        for seed in 0..10 {
            let truth = ground_truth(&CohortSpec { n_subjects: 110, ..small(200 + seed, 0.5) }).unwrap();
            let r = repeat_cv(&oracle_dataset(&truth), 1, seed, &CvConfig::default()).unwrap();
            ratio += r.summary.mean / truth.noise_sd;
        }
        ratio /= 10.0;
        assert!((ratio - 1.0).abs() <= 0.15, "{ratio}");
    }
}
