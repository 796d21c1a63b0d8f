//! Flat key/value pipeline configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use spdt_core::estimators::{DependenceKind, MatrixDesign};
use spdt_core::evaluation::{CvConfig, PairedTest};
use spdt_core::manifold::{GeometryKind, KarcherConfig};
use spdt_core::pipeline::FeaturizeSettings;
use spdt_core::signal::{eeg_bands, BandSpec, Centering};

/// Fixed segment length in seconds, or a stationarity search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentLength {
    Seconds(f64),
    Auto,
}

impl fmt::Display for SegmentLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentLength::Seconds(s) => write!(f, "{s}"),
            SegmentLength::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for SegmentLength {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(SegmentLength::Auto);
        }
        let v: f64 = s.parse().with_context(|| format!("segment length {s:?} is neither a number nor `auto`"))?;
        Ok(SegmentLength::Seconds(v))
    }
}

impl Serialize for SegmentLength {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SegmentLength::Seconds(v) => s.serialize_f64(*v),
            SegmentLength::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for SegmentLength {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(SegmentLength::Seconds(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Band written as `name:low:high`.
fn parse_band(s: &str) -> Result<BandSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let [name, low, high] = parts[..] else {
        bail!("band {s:?} must be written as name:low:high");
    };
    Ok(BandSpec::new(name, low.parse().context("band low edge")?, high.parse().context("band high edge")?))
}

fn format_band(b: &BandSpec) -> String {
    format!("{}:{}:{}", b.name, b.low, b.high)
}

mod band_list {
    use super::*;

    pub fn serialize<S: Serializer>(bands: &[BandSpec], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(bands.iter().map(format_band))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<BandSpec>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter().map(|s| parse_band(s).map_err(serde::de::Error::custom)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub dependence: DependenceKind,
    pub geometry: GeometryKind,
    pub design: MatrixDesign,
    #[serde(with = "band_list")]
    pub bands: Vec<BandSpec>,
    pub segment_seconds: SegmentLength,
    pub segment_candidates: Vec<f64>,
    pub rejection_quota: f64,
    pub centering: Centering,
    pub isometric: bool,
    pub karcher_tolerance: f64,
    pub karcher_max_iterations: usize,
    pub alpha: f64,
    pub n_lambdas: usize,
    pub lambda_ratio: f64,
    pub tolerance: f64,
    pub max_passes: usize,
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub penalize_covariates: bool,
    pub test: PairedTest,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let cv = CvConfig::default();
        let karcher = KarcherConfig::default();
        PipelineConfig {
            dependence: DependenceKind::Covariance,
            geometry: GeometryKind::LogEuclidean,
            design: MatrixDesign::Spatiofrequential,
            bands: eeg_bands(),
            segment_seconds: SegmentLength::Seconds(4.0),
            segment_candidates: vec![2.0, 4.0, 8.0, 16.0],
            rejection_quota: 0.95,
            centering: Centering::PerChannel,
            isometric: true,
            karcher_tolerance: karcher.tolerance,
            karcher_max_iterations: karcher.max_iterations,
            alpha: cv.alpha,
            n_lambdas: cv.n_lambdas,
            lambda_ratio: cv.lambda_ratio,
            tolerance: cv.tolerance,
            max_passes: cv.max_passes,
            outer_folds: cv.outer_folds,
            inner_folds: cv.inner_folds,
            repetitions: 100,
            seed: 0,
            penalize_covariates: cv.penalize_covariates,
            test: PairedTest::Wilcoxon,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.cv().validate()?;
        self.karcher().validate()?;
        if self.bands.is_empty() {
            bail!("at least one band is required");
        }
        for b in &self.bands {
            if !(b.low > 0.0 && b.low < b.high) {
                bail!("band {} has invalid edges [{}, {}]", b.name, b.low, b.high);
            }
        }
        if let SegmentLength::Seconds(s) = self.segment_seconds {
            if !(s > 0.0 && s.is_finite()) {
                bail!("segment_seconds must be positive, got {s}");
            }
        }
        if self.segment_candidates.is_empty() || self.segment_candidates.windows(2).any(|w| !(w[0] < w[1])) {
            bail!("segment_candidates must be non-empty and strictly ascending");
        }
        if !(0.0..=1.0).contains(&self.rejection_quota) {
            bail!("rejection_quota must lie in [0, 1]");
        }
        if self.repetitions == 0 {
            bail!("repetitions must be positive");
        }
        Ok(())
    }

    pub fn cv(&self) -> CvConfig {
        CvConfig {
            outer_folds: self.outer_folds,
            inner_folds: self.inner_folds,
            alpha: self.alpha,
            n_lambdas: self.n_lambdas,
            lambda_ratio: self.lambda_ratio,
            tolerance: self.tolerance,
            max_passes: self.max_passes,
            penalize_covariates: self.penalize_covariates,
        }
    }

    pub fn karcher(&self) -> KarcherConfig {
        KarcherConfig {
            tolerance: self.karcher_tolerance,
            max_iterations: self.karcher_max_iterations,
            ..KarcherConfig::default()
        }
    }

    /// Featurization settings for a resolved segment length.
    pub fn featurize_settings(&self, segment_seconds: f64) -> FeaturizeSettings {
        FeaturizeSettings {
            bands: self.bands.clone(),
            segment_seconds,
            centering: self.centering,
            karcher: self.karcher(),
            ..FeaturizeSettings::new(self.dependence, self.design, self.geometry)
        }
    }

    /// The settings that determine subject means and features, for
    /// consistency checks between featurization and evaluation.
    pub fn featurization_key(&self) -> serde_json::Value {
        serde_json::json!({
            "dependence": self.dependence,
            "geometry": self.geometry,
            "design": self.design,
            "bands": self.bands.iter().map(format_band).collect::<Vec<_>>(),
            "segment_seconds": self.segment_seconds,
            "segment_candidates": self.segment_candidates,
            "rejection_quota": self.rejection_quota,
            "centering": self.centering,
            "isometric": self.isometric,
            "karcher_tolerance": self.karcher_tolerance,
            "karcher_max_iterations": self.karcher_max_iterations,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reads a TOML config, or a JSON artifact whose provenance embeds one.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            let mut value: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if let Some(embedded) = value.pointer("/provenance/config") {
                value = embedded.clone();
            }
            serde_json::from_value(value).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }
}

/// Wraps a message as a validation error.
pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    spdt_core::Error::invalid(msg).into()
}

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file, or a JSON artifact whose provenance embeds a config.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
    #[arg(long)]
    pub dependence: Option<DependenceKind>,
    #[arg(long)]
    pub geometry: Option<GeometryKind>,
    #[arg(long)]
    pub design: Option<MatrixDesign>,
    /// Bands as name:low:high, repeatable.
    #[arg(long = "band", value_parser = parse_band_arg)]
    pub bands: Vec<BandSpec>,
    /// Segment length in seconds, or `auto`.
    #[arg(long)]
    pub segment_seconds: Option<SegmentLength>,
    #[arg(long, value_delimiter = ',')]
    pub segment_candidates: Option<Vec<f64>>,
    #[arg(long)]
    pub rejection_quota: Option<f64>,
    /// Skip per-segment mean removal.
    #[arg(long)]
    pub no_centering: bool,
    /// Plain upper-triangle vectorization instead of the isometric one.
    #[arg(long)]
    pub non_isometric: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_lambdas: Option<usize>,
    #[arg(long)]
    pub lambda_ratio: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_passes: Option<usize>,
    #[arg(long)]
    pub outer_folds: Option<usize>,
    #[arg(long)]
    pub inner_folds: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Base seed of the fold assignment.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exempt covariates from the penalty.
    #[arg(long)]
    pub unpenalized_covariates: bool,
    #[arg(long)]
    pub test: Option<PairedTestArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PairedTestArg {
    Wilcoxon,
    TTest,
}

impl From<PairedTestArg> for PairedTest {
    fn from(a: PairedTestArg) -> Self {
        match a {
            PairedTestArg::Wilcoxon => PairedTest::Wilcoxon,
            PairedTestArg::TTest => PairedTest::TTest,
        }
    }
}

fn parse_band_arg(s: &str) -> std::result::Result<BandSpec, String> {
    parse_band(s).map_err(|e| e.to_string())
}

impl ConfigArgs {
    /// File values (or defaults) with flags applied on top, validated.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        self.resolve_or(PipelineConfig::default())
    }

    /// As [`ConfigArgs::resolve`], with `fallback` in place of the defaults
    /// when no config file is given.
    pub fn resolve_or(&self, fallback: PipelineConfig) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => fallback,
        };
        if let Some(v) = self.dependence {
            c.dependence = v;
        }
        if let Some(v) = self.geometry {
            c.geometry = v;
        }
        if let Some(v) = self.design {
            c.design = v;
        }
        if !self.bands.is_empty() {
            c.bands = self.bands.clone();
        }
        if let Some(v) = self.segment_seconds {
            c.segment_seconds = v;
        }
        if let Some(v) = &self.segment_candidates {
            c.segment_candidates = v.clone();
        }
        if let Some(v) = self.rejection_quota {
            c.rejection_quota = v;
        }
        if self.no_centering {
            c.centering = Centering::None;
        }
        if self.non_isometric {
            c.isometric = false;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.n_lambdas {
            c.n_lambdas = v;
        }
        if let Some(v) = self.lambda_ratio {
            c.lambda_ratio = v;
        }
        if let Some(v) = self.tolerance {
            c.tolerance = v;
        }
        if let Some(v) = self.max_passes {
            c.max_passes = v;
        }
        if let Some(v) = self.outer_folds {
            c.outer_folds = v;
        }
        if let Some(v) = self.inner_folds {
            c.inner_folds = v;
        }
        if let Some(v) = self.repetitions {
            c.repetitions = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if self.unpenalized_covariates {
            c.penalize_covariates = false;
        }
        if let Some(v) = self.test {
            c.test = v.into();
        }
        c.validate().map_err(|e| invalid(format!("{e:#}")))?;
        Ok(c)
    }
}
