//! Recording-to-dataset glue: per-subject SPD means for one condition, and
//! assembly of cross-validation datasets.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{build_subject_matrices, subject_mean, DependenceKind, MatrixDesign};
use crate::evaluation::{CvDataset, FeatureSource};
use crate::manifold::{GeometryKind, KarcherConfig};
use crate::signal::{eeg_bands, segment, stationary_fraction, BandSpec, Centering, Recording};
use crate::spd::SpdMatrix;

/// Settings that turn one recording into one subject-level SPD mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeSettings {
    pub dependence: DependenceKind,
    pub design: MatrixDesign,
    pub geometry: GeometryKind,
    pub bands: Vec<BandSpec>,
    pub segment_seconds: f64,
    pub centering: Centering,
    pub karcher: KarcherConfig,
}

impl FeaturizeSettings {
    pub fn new(dependence: DependenceKind, design: MatrixDesign, geometry: GeometryKind) -> Self {
        FeaturizeSettings {
            dependence,
            design,
            geometry,
            bands: eeg_bands(),
            segment_seconds: 4.0,
            centering: Centering::PerChannel,
            karcher: KarcherConfig::default(),
        }
    }
}

/// Subject-level mean of the per-segment matrices of `rec`.
pub fn subject_mean_matrix(rec: &Recording, s: &FeaturizeSettings) -> Result<SpdMatrix> {
    let matrices = build_subject_matrices(rec, s.dependence, s.design, &s.bands, s.segment_seconds, s.centering)?;
    subject_mean(&matrices, s.geometry, &s.karcher)
}

/// Subject means for `n` subjects whose recordings are produced on demand,
/// so only a few recordings are alive at once.
pub fn subject_means_with<F>(n: usize, ids: &[String], recording: F, s: &FeaturizeSettings) -> Result<Vec<SpdMatrix>>
where
    F: Fn(usize) -> Result<Recording> + Sync,
{
    if ids.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: ids.len() });
    }
    (0..n)
        .into_par_iter()
        .map(|z| {
            recording(z)
                .and_then(|rec| subject_mean_matrix(&rec, s))
                .map_err(|e| e.context(format!("subject {}", ids[z])))
        })
        .collect()
}

/// Subject means of recordings already in memory.
pub fn subject_means(recs: &[Recording], ids: &[String], s: &FeaturizeSettings) -> Result<Vec<SpdMatrix>> {
    subject_means_with(recs.len(), ids, |z| Ok(recs[z].clone()), s)
}

/// Pooled segment-length search over `n` recordings produced on demand:
/// the largest candidate at which at least `rejection_quota` of all
/// (channel × segment) ADF tests reject the unit root, else the smallest.
/// Candidates longer than any recording are not considered.
pub fn choose_segment_length_with<F>(n: usize, recording: F, candidates: &[f64], rejection_quota: f64) -> Result<f64>
where
    F: Fn(usize) -> Result<Recording> + Sync,
{
    let smallest = *candidates
        .first()
        .ok_or_else(|| Error::invalid("no candidate segment lengths"))?;
    if candidates.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("candidate segment lengths must be strictly ascending"));
    }
    if !(0.0..=1.0).contains(&rejection_quota) {
        return Err(Error::invalid("rejection quota must lie in [0, 1]"));
    }
    if n == 0 {
        return Err(Error::invalid("no recordings to test"));
    }
    if candidates.len() == 1 {
        return Ok(smallest);
    }
    // per subject and candidate: (rejections, tests), None when too short
    let counts: Vec<Vec<Option<(f64, f64)>>> = (0..n)
        .into_par_iter()
        .map(|z| {
            let rec = recording(z)?;
            candidates
                .iter()
                .map(|&c| {
                    let tests = (segment(&rec, c, Centering::None)?.len() * rec.n_channels()) as f64;
                    if tests == 0.0 {
                        return Ok(None);
                    }
                    Ok(Some(((stationary_fraction(&[&rec], c)? * tests).round(), tests)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.context("segment length search"))?;
    let mut best = None;
    for (k, &c) in candidates.iter().enumerate() {
        let mut rejected = 0.0;
        let mut total = 0.0;
        let mut fits = true;
        for subject in &counts {
            match subject[k] {
                Some((r, t)) => {
                    rejected += r;
                    total += t;
                }
                None => fits = false,
            }
        }
        if !fits {
            break;
        }
        if rejected / total >= rejection_quota {
            best = Some(c);
        }
    }
    Ok(best.unwrap_or(smallest))
}

/// Covariates-only dataset.
pub fn baseline_dataset(
    ids: Vec<String>,
    response: Vec<f64>,
    covariate_names: Vec<String>,
    covariates: DMatrix<f64>,
) -> Result<CvDataset> {
    CvDataset::new(ids, response, covariate_names, covariates, FeatureSource::None)
}
