//! Repeated two-level nested cross-validation and paired model comparison.
//!
//! Every transform fitted inside a fold (group reference, standardization,
//! λ selection) records the subject indices it saw, and each repetition's
//! records are checked against its outer test folds before the repetition
//! is accepted.

pub mod stats;
pub mod table;

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{feature_from_mean, fit_group_reference, DependenceKind, MatrixDesign};
use crate::manifold::{GeometryKind, KarcherConfig, TangentSpace};
use crate::regression::{self, standardize, DesignMatrix};
use crate::spd::SpdMatrix;

pub use stats::PairedTest;

/// Version tag of serialized reports and comparisons.
pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Smallest cohort accepted by [`make_fold_plan`].
pub const MIN_SUBJECTS: usize = 20;

/// One cell of the dependence × geometry × design grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub dependence: DependenceKind,
    pub geometry: GeometryKind,
    pub design: MatrixDesign,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.dependence, self.geometry, self.design)
    }
}

/// Outer and inner fold assignments of one repetition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub outer_folds: usize,
    pub inner_folds: usize,
    /// Outer fold of every subject.
    pub outer: Vec<usize>,
    /// For each outer fold, the inner fold of every training subject
    /// (`None` for that fold's test subjects).
    pub inner: Vec<Vec<Option<usize>>>,
}

impl FoldPlan {
    pub fn n_subjects(&self) -> usize {
        self.outer.len()
    }

    pub fn outer_test(&self, fold: usize) -> Vec<usize> {
        (0..self.outer.len()).filter(|&i| self.outer[i] == fold).collect()
    }

    pub fn outer_train(&self, fold: usize) -> Vec<usize> {
        (0..self.outer.len()).filter(|&i| self.outer[i] != fold).collect()
    }
}

fn balanced_assignment(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Seeded fold plan with the given numbers of outer and inner folds.
pub fn make_fold_plan_with(n_subjects: usize, outer_folds: usize, inner_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_subjects < MIN_SUBJECTS {
        return Err(Error::invalid(format!(
            "nested cross-validation needs at least {MIN_SUBJECTS} subjects, got {n_subjects}"
        )));
    }
    if outer_folds < 2 || inner_folds < 2 {
        return Err(Error::invalid("fold counts must be at least 2"));
    }
    if outer_folds > n_subjects {
        return Err(Error::invalid("more outer folds than subjects"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outer = balanced_assignment(n_subjects, outer_folds, &mut rng);
    let mut inner = Vec::with_capacity(outer_folds);
    for k in 0..outer_folds {
        let train: Vec<usize> = (0..n_subjects).filter(|&i| outer[i] != k).collect();
        if inner_folds > train.len() {
            return Err(Error::invalid("more inner folds than training subjects"));
        }
        let assignment = balanced_assignment(train.len(), inner_folds, &mut rng);
        let mut per_subject = vec![None; n_subjects];
        for (pos, &i) in train.iter().enumerate() {
            per_subject[i] = Some(assignment[pos]);
        }
        inner.push(per_subject);
    }
    Ok(FoldPlan { seed, outer_folds, inner_folds, outer, inner })
}

/// 10 × 10 fold plan.
pub fn make_fold_plan(n_subjects: usize, seed: u64) -> Result<FoldPlan> {
    make_fold_plan_with(n_subjects, 10, 10, seed)
}

/// Root-mean-square error.
pub fn rmse(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: predictions.len() });
    }
    if truth.is_empty() {
        return Err(Error::invalid("rmse of an empty sample"));
    }
    let sse: f64 = predictions.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// Where the EEG part of the design comes from.
#[derive(Debug, Clone)]
pub enum FeatureSource {
    /// Covariates only.
    None,
    /// Fixed per-subject features that need no fold-wise refit.
    Fixed { names: Vec<String>, values: DMatrix<f64> },
    /// Subject-level SPD means; the group reference is refit on every outer
    /// training set.
    SubjectMeans {
        means: Vec<SpdMatrix>,
        geometry: GeometryKind,
        isometric: bool,
        karcher: KarcherConfig,
    },
}

/// Everything a cross-validation run needs, indexed by subject.
#[derive(Debug, Clone)]
pub struct CvDataset {
    pub subject_ids: Vec<String>,
    pub response: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// Subjects in rows.
    pub covariates: DMatrix<f64>,
    pub features: FeatureSource,
}

impl CvDataset {
    pub fn new(
        subject_ids: Vec<String>,
        response: Vec<f64>,
        covariate_names: Vec<String>,
        covariates: DMatrix<f64>,
        features: FeatureSource,
    ) -> Result<Self> {
        let n = subject_ids.len();
        if response.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: response.len() });
        }
        if covariates.nrows() != n || covariates.ncols() != covariate_names.len() {
            return Err(Error::invalid("covariate table does not match subjects and names"));
        }
        let unique: BTreeSet<&str> = subject_ids.iter().map(String::as_str).collect();
        if unique.len() != n {
            return Err(Error::invalid("subject ids must be unique"));
        }
        match &features {
            FeatureSource::None if covariate_names.is_empty() => {
                return Err(Error::invalid("dataset has neither features nor covariates"))
            }
            FeatureSource::Fixed { names, values } if values.nrows() != n || values.ncols() != names.len() => {
                return Err(Error::invalid("feature table does not match subjects and names"))
            }
            FeatureSource::SubjectMeans { means, .. } => {
                if means.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: means.len() });
                }
                if means.windows(2).any(|w| w[0].dim() != w[1].dim()) {
                    return Err(Error::invalid("subject means differ in dimension"));
                }
            }
            _ => {}
        }
        Ok(CvDataset { subject_ids, response, covariate_names, covariates, features })
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    /// Label used when no condition is attached.
    pub fn model_label(&self) -> String {
        match &self.features {
            FeatureSource::None => "covariates-only".into(),
            FeatureSource::Fixed { .. } => "fixed-features".into(),
            FeatureSource::SubjectMeans { geometry, .. } => geometry.label().into(),
        }
    }
}

/// Names `m{i}_{j}` of the row-major upper triangle of a `dim × dim` matrix.
pub fn upper_names(dim: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(dim * (dim + 1) / 2);
    for i in 0..dim {
        for j in i..dim {
            names.push(format!("m{i}_{j}"));
        }
    }
    names
}

/// Elastic-net and fold settings of a cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub alpha: f64,
    pub n_lambdas: usize,
    pub lambda_ratio: f64,
    pub tolerance: f64,
    pub max_passes: usize,
    pub penalize_covariates: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            outer_folds: 10,
            inner_folds: 10,
            alpha: 0.5,
            n_lambdas: regression::DEFAULT_N_LAMBDAS,
            lambda_ratio: regression::DEFAULT_LAMBDA_RATIO,
            tolerance: regression::DEFAULT_TOLERANCE,
            max_passes: regression::DEFAULT_MAX_PASSES,
            penalize_covariates: true,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(Error::invalid("fold counts must be at least 2"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.n_lambdas == 0 {
            return Err(Error::invalid("n_lambdas must be positive"));
        }
        if !(self.lambda_ratio > 0.0 && self.lambda_ratio <= 1.0) {
            return Err(Error::invalid("lambda_ratio must lie in (0, 1]"));
        }
        if !(self.tolerance > 0.0) || self.max_passes == 0 {
            return Err(Error::invalid("tolerance and max_passes must be positive"));
        }
        Ok(())
    }
}

/// Which subjects a fitted transform saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    GroupReference,
    Standardization,
    InnerStandardization,
    LambdaSelection,
    FinalFit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformRecord {
    pub outer_fold: usize,
    pub kind: TransformKind,
    pub fitted_on: Vec<usize>,
}

/// Fitting records of one repetition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LeakageAudit {
    pub records: Vec<TransformRecord>,
}

impl LeakageAudit {
    /// Fails when any record of outer fold `k` includes a subject of that fold's test set.
    pub fn verify(&self, plan: &FoldPlan) -> Result<()> {
        for rec in &self.records {
            if rec.outer_fold >= plan.outer_folds {
                return Err(Error::Leakage(format!("record for unknown outer fold {}", rec.outer_fold)));
            }
            if let Some(&i) = rec.fitted_on.iter().find(|&&i| plan.outer.get(i) == Some(&rec.outer_fold)) {
                return Err(Error::Leakage(format!(
                    "{:?} in outer fold {} was fitted on held-out subject index {i}",
                    rec.kind, rec.outer_fold
                )));
            }
        }
        for k in 0..plan.outer_folds {
            let required = [TransformKind::Standardization, TransformKind::LambdaSelection, TransformKind::FinalFit];
            for kind in required {
                if !self.records.iter().any(|r| r.outer_fold == k && r.kind == kind) {
                    return Err(Error::Leakage(format!("outer fold {k} has no {kind:?} record")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Result of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub seed: u64,
    pub rmse: f64,
    /// Out-of-fold prediction for every subject, in subject order.
    pub predictions: Vec<f64>,
    pub outer_fold: Vec<usize>,
    /// λ chosen by the inner loop, per outer fold.
    pub chosen_lambdas: Vec<f64>,
    /// Number of transform records that passed the leakage audit.
    pub audited_transforms: usize,
}

impl RepetitionResult {
    pub fn squared_errors(&self, truth: &[f64]) -> Vec<f64> {
        self.predictions.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl RmseSummary {
    pub fn of(values: &[f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        RmseSummary { mean, min, max }
    }
}

/// Repeated nested cross-validation of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub format_version: u32,
    pub model: String,
    #[serde(default)]
    pub condition: Option<Condition>,
    #[serde(default)]
    pub target: Option<String>,
    pub subject_ids: Vec<String>,
    pub response: Vec<f64>,
    pub config: CvConfig,
    pub repetitions: Vec<RepetitionResult>,
    pub summary: RmseSummary,
    #[serde(default)]
    pub provenance: Option<serde_json::Value>,
}

impl CvReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: CvReport = serde_json::from_str(s)?;
        if r.format_version != REPORT_FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported report format version {}", r.format_version)));
        }
        Ok(r)
    }
}

/// Per-fold design for all subjects: EEG features followed by covariates.
struct FoldDesign {
    x: DMatrix<f64>,
    names: Vec<String>,
    penalized: Vec<bool>,
}

impl FoldDesign {
    fn subset(&self, rows: &[usize], response: &[f64]) -> Result<DesignMatrix> {
        DesignMatrix::with_penalties(
            self.x.select_rows(rows),
            self.names.clone(),
            rows.iter().map(|&i| response[i]).collect(),
            self.penalized.clone(),
        )
    }
}

fn assemble(data: &CvDataset, features: Option<(Vec<String>, DMatrix<f64>)>, cfg: &CvConfig) -> Result<FoldDesign> {
    let n = data.n_subjects();
    let q = data.covariate_names.len();
    let (mut names, feat) = features.unwrap_or_else(|| (Vec::new(), DMatrix::zeros(n, 0)));
    let p = feat.ncols();
    let mut x = DMatrix::zeros(n, p + q);
    x.view_mut((0, 0), (n, p)).copy_from(&feat);
    x.view_mut((0, p), (n, q)).copy_from(&data.covariates);
    names.extend(data.covariate_names.iter().cloned());
    let mut penalized = vec![true; p];
    penalized.extend(std::iter::repeat_n(cfg.penalize_covariates, q));
    Ok(FoldDesign { x, names, penalized })
}

fn features_at(means: &[SpdMatrix], geometry: GeometryKind, space: Option<&TangentSpace>, isometric: bool) -> Result<(Vec<String>, DMatrix<f64>)> {
    let rows: Vec<Vec<f64>> = means
        .par_iter()
        .map(|m| feature_from_mean(m, geometry, space, isometric))
        .collect::<Result<_>>()?;
    let dim = means[0].dim();
    let p = rows[0].len();
    let x = DMatrix::from_fn(means.len(), p, |i, j| rows[i][j]);
    Ok((upper_names(dim), x))
}

/// MSE of every λ on one inner fold.
fn inner_fold_mse(design: &FoldDesign, response: &[f64], train: &[usize], test: &[usize], lambdas: &[f64], cfg: &CvConfig) -> Result<Vec<f64>> {
    let (std, params) = standardize(&design.subset(train, response)?)?;
    let fits = regression::fit_path(&std, lambdas, cfg.alpha, cfg.tolerance, cfg.max_passes)?;
    let rows = design.x.select_rows(test);
    let truth: Vec<f64> = test.iter().map(|&i| response[i]).collect();
    regression::predict_path(&fits, &params, &rows, &design.names)?
        .iter()
        .map(|pred| Ok(rmse(pred, &truth)?.powi(2)))
        .collect()
}

/// Population standard deviation of the training responses, or 1 when they are constant.
fn response_scale(train: &[usize], response: &[f64]) -> f64 {
    let n = train.len() as f64;
    let mean = train.iter().map(|&i| response[i]).sum::<f64>() / n;
    let sd = (train.iter().map(|&i| (response[i] - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 && sd.is_finite() {
        sd
    } else {
        1.0
    }
}

struct OuterOutcome {
    test: Vec<usize>,
    predictions: Vec<f64>,
    lambda: f64,
    records: Vec<TransformRecord>,
}

fn outer_fold(data: &CvDataset, plan: &FoldPlan, k: usize, fixed: Option<&FoldDesign>, cfg: &CvConfig) -> Result<OuterOutcome> {
    let train = plan.outer_train(k);
    let test = plan.outer_test(k);
    let mut records = Vec::new();

    let owned;
    let design = match (fixed, &data.features) {
        (Some(d), _) => d,
        (None, FeatureSource::SubjectMeans { means, geometry, isometric, karcher }) => {
            let train_means: Vec<SpdMatrix> = train.iter().map(|&i| means[i].clone()).collect();
            let reference = fit_group_reference(&train_means, *geometry, karcher)
                .map_err(|e| e.context(format!("group reference of outer fold {k}")))?;
            records.push(TransformRecord { outer_fold: k, kind: TransformKind::GroupReference, fitted_on: train.clone() });
            let space = TangentSpace::new(reference, *isometric);
            owned = assemble(data, Some(features_at(means, *geometry, Some(&space), *isometric)?), cfg)?;
            &owned
        }
        (None, _) => unreachable!("fixed designs are assembled once"),
    };

    // responses are rescaled by the training spread so solver tolerances are
    // scale-free; the selected model is unchanged because λ_max scales along
    let scale = response_scale(&train, &data.response);
    let response: Vec<f64> = data.response.iter().map(|v| v / scale).collect();
    let (outer_std, outer_params) = standardize(&design.subset(&train, &response)?)?;
    records.push(TransformRecord { outer_fold: k, kind: TransformKind::Standardization, fitted_on: train.clone() });
    let lambdas = regression::lambda_path(&outer_std, cfg.alpha, cfg.n_lambdas, cfg.lambda_ratio)?;

    let chosen = if lambdas.len() == 1 {
        0
    } else {
        let per_fold: Vec<Vec<f64>> = (0..plan.inner_folds)
            .into_par_iter()
            .map(|m| {
                let inner_train: Vec<usize> = train.iter().copied().filter(|&i| plan.inner[k][i] != Some(m)).collect();
                let inner_test: Vec<usize> = train.iter().copied().filter(|&i| plan.inner[k][i] == Some(m)).collect();
                inner_fold_mse(design, &response, &inner_train, &inner_test, &lambdas, cfg)
            })
            .collect::<Result<_>>()?;
        for m in 0..plan.inner_folds {
            let inner_train: Vec<usize> = train.iter().copied().filter(|&i| plan.inner[k][i] != Some(m)).collect();
            records.push(TransformRecord { outer_fold: k, kind: TransformKind::InnerStandardization, fitted_on: inner_train });
        }
        let mut best = 0;
        let mut best_mse = f64::INFINITY;
        for l in 0..lambdas.len() {
            let mean = per_fold.iter().map(|f| f[l]).sum::<f64>() / per_fold.len() as f64;
            if mean < best_mse {
                best_mse = mean;
                best = l;
            }
        }
        best
    };
    records.push(TransformRecord { outer_fold: k, kind: TransformKind::LambdaSelection, fitted_on: train.clone() });

    let fits = regression::fit_path(&outer_std, &lambdas[..=chosen], cfg.alpha, cfg.tolerance, cfg.max_passes)?;
    let fit = fits.last().expect("path is non-empty");
    records.push(TransformRecord { outer_fold: k, kind: TransformKind::FinalFit, fitted_on: train.clone() });
    let predictions = regression::predict(fit, &outer_params, &design.x.select_rows(&test), &design.names)?
        .into_iter()
        .map(|p| p * scale)
        .collect();
    Ok(OuterOutcome { test, predictions, lambda: lambdas[chosen], records })
}

/// One repetition of nested cross-validation under `plan`, with its audit trail.
pub fn nested_cv(data: &CvDataset, plan: &FoldPlan, cfg: &CvConfig) -> Result<(RepetitionResult, LeakageAudit)> {
    cfg.validate()?;
    if plan.n_subjects() != data.n_subjects() {
        return Err(Error::DimensionMismatch { expected: data.n_subjects(), got: plan.n_subjects() });
    }
    let fixed = match &data.features {
        FeatureSource::None => Some(assemble(data, None, cfg)?),
        FeatureSource::Fixed { names, values } => Some(assemble(data, Some((names.clone(), values.clone())), cfg)?),
        FeatureSource::SubjectMeans { geometry: GeometryKind::Euclidean, means, isometric, .. } => {
            Some(assemble(data, Some(features_at(means, GeometryKind::Euclidean, None, *isometric)?), cfg)?)
        }
        FeatureSource::SubjectMeans { .. } => None,
    };

    let outcomes: Vec<OuterOutcome> = (0..plan.outer_folds)
        .into_par_iter()
        .map(|k| outer_fold(data, plan, k, fixed.as_ref(), cfg))
        .collect::<Result<_>>()?;

    let n = data.n_subjects();
    let mut predictions = vec![f64::NAN; n];
    let mut covered = vec![false; n];
    let mut audit = LeakageAudit::default();
    let mut chosen_lambdas = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        for (&i, &p) in o.test.iter().zip(&o.predictions) {
            if covered[i] {
                return Err(Error::invalid(format!("subject {} predicted twice", data.subject_ids[i])));
            }
            covered[i] = true;
            predictions[i] = p;
        }
        chosen_lambdas.push(o.lambda);
        audit.records.extend(o.records);
    }
    if let Some(i) = covered.iter().position(|c| !c) {
        return Err(Error::invalid(format!("subject {} never predicted", data.subject_ids[i])));
    }
    audit.verify(plan)?;
    let rmse = rmse(&predictions, &data.response)?;
    Ok((
        RepetitionResult {
            seed: plan.seed,
            rmse,
            predictions,
            outer_fold: plan.outer.clone(),
            chosen_lambdas,
            audited_transforms: audit.len(),
        },
        audit,
    ))
}

/// Nested cross-validation repeated over seeds `base_seed .. base_seed + n`.
pub fn repeat_cv(data: &CvDataset, n_repetitions: usize, base_seed: u64, cfg: &CvConfig) -> Result<CvReport> {
    cfg.validate()?;
    if n_repetitions == 0 {
        return Err(Error::invalid("at least one repetition is required"));
    }
    let repetitions: Vec<RepetitionResult> = (0..n_repetitions as u64)
        .into_par_iter()
        .map(|r| {
            let seed = base_seed.wrapping_add(r);
            let plan = make_fold_plan_with(data.n_subjects(), cfg.outer_folds, cfg.inner_folds, seed)?;
            nested_cv(data, &plan, cfg).map(|(res, _)| res)
        })
        .collect::<Result<_>>()?;
    let rmses: Vec<f64> = repetitions.iter().map(|r| r.rmse).collect();
    Ok(CvReport {
        format_version: REPORT_FORMAT_VERSION,
        model: data.model_label(),
        condition: None,
        target: None,
        subject_ids: data.subject_ids.clone(),
        response: data.response.clone(),
        config: cfg.clone(),
        summary: RmseSummary::of(&rmses),
        repetitions,
        provenance: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    FirstBetter,
    SecondBetter,
    Tie,
}

/// Paired comparison of two reports over identical subjects and fold seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub format_version: u32,
    pub model_a: String,
    pub model_b: String,
    pub test: PairedTest,
    pub p_values: Vec<f64>,
    pub mean_p: f64,
    /// Mean over repetitions and subjects of `se_a − se_b`.
    pub mean_squared_error_difference: f64,
    pub direction: Direction,
    #[serde(default)]
    pub note: Option<String>,
}

fn report_label(r: &CvReport) -> String {
    match r.condition {
        Some(c) => format!("{c}"),
        None => r.model.clone(),
    }
}

/// Per repetition, a paired test on per-subject squared errors; p-values are averaged.
pub fn compare_models(a: &CvReport, b: &CvReport, test: PairedTest) -> Result<ComparisonResult> {
    if a.subject_ids != b.subject_ids {
        return Err(Error::invalid("reports cover different subjects"));
    }
    if a.response != b.response {
        return Err(Error::invalid("reports use different responses"));
    }
    if a.repetitions.len() != b.repetitions.len() || a.repetitions.is_empty() {
        return Err(Error::invalid("reports have different numbers of repetitions"));
    }
    let mut p_values = Vec::with_capacity(a.repetitions.len());
    let mut diff_sum = 0.0;
    let mut count = 0usize;
    for (ra, rb) in a.repetitions.iter().zip(&b.repetitions) {
        if ra.seed != rb.seed || ra.outer_fold != rb.outer_fold {
            return Err(Error::invalid(format!(
                "repetitions are not paired (seeds {} and {})",
                ra.seed, rb.seed
            )));
        }
        let d: Vec<f64> = ra
            .squared_errors(&a.response)
            .iter()
            .zip(rb.squared_errors(&b.response))
            .map(|(x, y)| x - y)
            .collect();
        diff_sum += d.iter().sum::<f64>();
        count += d.len();
        p_values.push(test.p_value(&d));
    }
    let mean_p = p_values.iter().sum::<f64>() / p_values.len() as f64;
    let mean_diff = diff_sum / count as f64;
    let direction = if mean_diff < 0.0 {
        Direction::FirstBetter
    } else if mean_diff > 0.0 {
        Direction::SecondBetter
    } else {
        Direction::Tie
    };
    Ok(ComparisonResult {
        format_version: REPORT_FORMAT_VERSION,
        model_a: report_label(a),
        model_b: report_label(b),
        test,
        p_values,
        mean_p,
        mean_squared_error_difference: mean_diff,
        direction,
        note: None,
    })
}

/// Comparison against the covariates-only baseline.
pub fn standalone_test(report: &CvReport, baseline: &CvReport, test: PairedTest) -> Result<ComparisonResult> {
    let mut result = compare_models(report, baseline, test)?;
    result.note = Some("baseline is the covariates-only model (an interpretation of the stand-alone test)".into());
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::random_spd;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    fn fixed_dataset(x: DMatrix<f64>, y: Vec<f64>) -> CvDataset {
        let n = y.len();
        let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        CvDataset::new(ids(n), y, vec![], DMatrix::zeros(n, 0), FeatureSource::Fixed { names, values: x }).unwrap()
    }

    fn quick() -> CvConfig {
        CvConfig { n_lambdas: 20, lambda_ratio: 1e-2, ..CvConfig::default() }
    }

    #[test]
    fn fold_plan_shapes() {
        let plan = make_fold_plan(110, 5).unwrap();
        for k in 0..10 {
            assert_eq!(plan.outer_test(k).len(), 11);
            let train = plan.outer_train(k);
            let mut sizes = [0; 10];
            for &i in &train {
                sizes[plan.inner[k][i].unwrap()] += 1;
            }
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for i in plan.outer_test(k) {
                assert_eq!(plan.inner[k][i], None);
            }
        }
        assert_eq!(make_fold_plan(110, 5).unwrap(), plan);
        assert_ne!(make_fold_plan(110, 0).unwrap().outer, make_fold_plan(110, 1).unwrap().outer);
        assert!(make_fold_plan(19, 0).is_err());

        let uneven = make_fold_plan(23, 2).unwrap();
        let sizes: Vec<usize> = (0..10).map(|k| uneven.outer_test(k).len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(sizes.iter().sum::<usize>(), 23);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[0.0], &[1.0, 2.0]).is_err());
        // mean predictor on a standardized response
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = y.iter().sum::<f64>() / 1000.0;
        let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 1000.0).sqrt();
        let z: Vec<f64> = y.iter().map(|v| (v - m) / sd).collect();
        assert!((rmse(&vec![0.0; 1000], &z).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_linear_model_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = gaussian(&mut rng, 40, 3);
        let y: Vec<f64> = (0..40).map(|i| 1.0 + 2.0 * x[(i, 0)] - 0.5 * x[(i, 1)] + 0.25 * x[(i, 2)]).collect();
        let data = fixed_dataset(x, y);
        let cfg = CvConfig { n_lambdas: 60, lambda_ratio: 1e-10, tolerance: 1e-12, ..CvConfig::default() };
        let report = repeat_cv(&data, 2, 3, &cfg).unwrap();
        assert!(report.summary.max <= 1e-6, "{:?}", report.summary);
    }

    #[test]
    fn noise_response_gives_null_rmse() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 60;
        let x = gaussian(&mut rng, n, 8);
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = y.iter().sum::<f64>() / n as f64;
        let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        let report = repeat_cv(&fixed_dataset(x, y), 10, 0, &quick()).unwrap();
        assert!((report.summary.mean - sd).abs() <= 0.2 * sd, "{} vs {sd}", report.summary.mean);
    }

    #[test]
    fn single_lambda_path_reports() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = gaussian(&mut rng, 25, 4);
        let y: Vec<f64> = (0..25).map(|i| x[(i, 0)]).collect();
        let cfg = CvConfig { n_lambdas: 1, ..CvConfig::default() };
        let report = repeat_cv(&fixed_dataset(x, y), 1, 0, &cfg).unwrap();
        assert_eq!(report.summary.mean, report.summary.min);
        assert_eq!(report.summary.max, report.summary.min);
        // λ_max keeps every coefficient at zero: each prediction is its training mean
        let r = &report.repetitions[0];
        assert!(r.chosen_lambdas.iter().all(|&l| l > 0.0));
    }

    fn spd_dataset(seed: u64, n: usize, geometry: GeometryKind) -> CvDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means: Vec<SpdMatrix> = (0..n).map(|_| random_spd(&mut rng, 4)).collect();
        let y: Vec<f64> = means.iter().map(|m| m.log_determinant() + 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        let age = DMatrix::from_fn(n, 1, |i, _| 60.0 + (i % 17) as f64);
        CvDataset::new(
            ids(n),
            y,
            vec!["age".into()],
            age,
            FeatureSource::SubjectMeans { means, geometry, isometric: true, karcher: KarcherConfig::default() },
        )
        .unwrap()
    }

    #[test]
    fn audit_covers_every_transform_and_catches_leaks() {
        let data = spd_dataset(5, 30, GeometryKind::Riemannian);
        let plan = make_fold_plan(30, 9).unwrap();
        let (res, audit) = nested_cv(&data, &plan, &quick()).unwrap();
        // per outer fold: reference, standardization, 10 inner, selection, final fit
        assert_eq!(audit.len(), 10 * 14);
        assert_eq!(res.audited_transforms, audit.len());
        assert!(res.predictions.iter().all(|p| p.is_finite()));

        let mut leaky = audit.clone();
        let held_out = plan.outer_test(3)[0];
        leaky.records.push(TransformRecord { outer_fold: 3, kind: TransformKind::GroupReference, fitted_on: vec![held_out] });
        assert!(matches!(leaky.verify(&plan), Err(Error::Leakage(_))));
        let mut incomplete = audit;
        incomplete.records.retain(|r| !(r.outer_fold == 0 && r.kind == TransformKind::FinalFit));
        assert!(matches!(incomplete.verify(&plan), Err(Error::Leakage(_))));
    }

    #[test]
    fn reports_are_identical_across_thread_counts() {
        let data = spd_dataset(6, 24, GeometryKind::LogEuclidean);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| repeat_cv(&data, 3, 40, &quick()).unwrap())
        };
        let a = run(1).to_json().unwrap();
        let b = run(8).to_json().unwrap();
        assert_eq!(a, b);
        let back = CvReport::from_json(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
    }

    #[test]
    fn euclidean_and_tangent_features_share_shape() {
        let e = spd_dataset(7, 24, GeometryKind::Euclidean);
        let t = spd_dataset(7, 24, GeometryKind::LogEuclidean);
        let re = repeat_cv(&e, 1, 0, &quick()).unwrap();
        let rt = repeat_cv(&t, 1, 0, &quick()).unwrap();
        assert_eq!(re.repetitions[0].predictions.len(), rt.repetitions[0].predictions.len());
        assert_ne!(re.repetitions[0].predictions, rt.repetitions[0].predictions);
    }

    #[test]
    fn comparisons() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 60;
        let x = gaussian(&mut rng, n, 5);
        let y: Vec<f64> = (0..n).map(|i| 3.0 * x[(i, 0)] - 2.0 * x[(i, 1)] + 0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        let signal = repeat_cv(&fixed_dataset(x.clone(), y.clone()), 10, 100, &quick()).unwrap();
        let same = compare_models(&signal, &signal, PairedTest::Wilcoxon).unwrap();
        assert!(same.p_values.iter().all(|&p| p == 1.0));
        assert_eq!(same.direction, Direction::Tie);

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let shuffled = DMatrix::from_fn(n, 5, |i, j| x[(perm[i], j)]);
        let null = repeat_cv(&fixed_dataset(shuffled, y), 10, 100, &quick()).unwrap();
        let c = compare_models(&signal, &null, PairedTest::Wilcoxon).unwrap();
        assert!(c.mean_p < 0.01, "{}", c.mean_p);
        assert_eq!(c.direction, Direction::FirstBetter);
        let t = compare_models(&signal, &null, PairedTest::TTest).unwrap();
        assert!(t.mean_p < 0.01);
        let s = standalone_test(&signal, &null, PairedTest::Wilcoxon).unwrap();
        assert!(s.note.is_some());

        let other = repeat_cv(&fixed_dataset(x, signal.response.clone()), 10, 200, &quick()).unwrap();
        assert!(compare_models(&signal, &other, PairedTest::Wilcoxon).is_err());
    }

    proptest! {
        #[test]
        fn rmse_is_symmetric_and_homogeneous(v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50), c in -10.0f64..10.0) {
            let p: Vec<f64> = v.iter().map(|x| x.0).collect();
            let t: Vec<f64> = v.iter().map(|x| x.1).collect();
            let base = rmse(&p, &t).unwrap();
            prop_assert_eq!(base, rmse(&t, &p).unwrap());
            let ps: Vec<f64> = p.iter().map(|x| x * c).collect();
            let ts: Vec<f64> = t.iter().map(|x| x * c).collect();
            prop_assert!((rmse(&ps, &ts).unwrap() - c.abs() * base).abs() <= 1e-9 * base.max(1.0) * c.abs().max(1.0));
        }
    }
}
