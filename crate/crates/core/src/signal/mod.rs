//! Multichannel recordings, segmentation, stationarity search and the
//! band-pass filter bank.

pub mod adf;
pub mod filter;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use adf::{adf_statistic, rejects_unit_root, schwert_lag};
pub use filter::BandPassFilter;

/// Minimum recording length in seconds.
pub const MIN_RECORDING_SECONDS: f64 = 4.0;

/// A multichannel time series, one row per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    channels: Vec<String>,
    samples_per_second: f64,
    data: DMatrix<f64>,
    paradigm: String,
}

impl Recording {
    pub fn new(
        channels: Vec<String>,
        samples_per_second: f64,
        data: DMatrix<f64>,
        paradigm: impl Into<String>,
    ) -> Result<Self> {
        if !(samples_per_second > 0.0) || !samples_per_second.is_finite() {
            return Err(Error::invalid("sampling rate must be positive"));
        }
        if data.nrows() < 2 {
            return Err(Error::invalid("a recording needs at least two channels"));
        }
        if channels.len() != data.nrows() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                got: channels.len(),
            });
        }
        if (data.ncols() as f64) < samples_per_second * MIN_RECORDING_SECONDS {
            return Err(Error::invalid(format!(
                "recording of {} samples is shorter than {MIN_RECORDING_SECONDS} s at {samples_per_second} Hz",
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("recording contains non-finite samples"));
        }
        Ok(Recording {
            channels,
            samples_per_second,
            data,
            paradigm: paradigm.into(),
        })
    }

    /// Channels named `ch0, ch1, …`.
    pub fn with_default_names(samples_per_second: f64, data: DMatrix<f64>, paradigm: &str) -> Result<Self> {
        let names = (0..data.nrows()).map(|i| format!("ch{i}")).collect();
        Self::new(names, samples_per_second, data, paradigm)
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn samples_per_second(&self) -> f64 {
        self.samples_per_second
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_samples() as f64 / self.samples_per_second
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn paradigm(&self) -> &str {
        &self.paradigm
    }

    pub fn channel(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }
}

/// An `n × t` block of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub data: DMatrix<f64>,
    pub samples_per_second: f64,
}

impl Segment {
    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }
}

/// Per-segment mean handling before covariance estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    /// Subtract each channel's mean within the segment.
    #[default]
    PerChannel,
    /// Leave samples untouched.
    None,
}

/// A named frequency band in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

impl BandSpec {
    pub fn new(name: impl Into<String>, low: f64, high: f64) -> Self {
        BandSpec {
            name: name.into(),
            low,
            high,
        }
    }

    pub fn validate(&self, samples_per_second: f64) -> Result<()> {
        if !(self.low > 0.0 && self.low < self.high && self.high < samples_per_second / 2.0) {
            return Err(Error::invalid(format!(
                "band '{}' [{}, {}] Hz is invalid at {} Hz sampling",
                self.name, self.low, self.high, samples_per_second
            )));
        }
        Ok(())
    }
}

/// δ, θ, α and β₁ bands.
pub fn eeg_bands() -> Vec<BandSpec> {
    vec![
        BandSpec::new("delta", 2.0, 4.0),
        BandSpec::new("theta", 4.0, 8.0),
        BandSpec::new("alpha", 8.0, 13.0),
        BandSpec::new("beta1", 13.0, 15.0),
    ]
}

/// Number of samples in a segment of `seconds`.
pub fn segment_samples(seconds: f64, samples_per_second: f64) -> usize {
    (seconds * samples_per_second).round() as usize
}

/// Splits the recording into consecutive non-overlapping segments, dropping
/// the trailing partial segment.
pub fn segment(rec: &Recording, seconds: f64, centering: Centering) -> Result<Vec<Segment>> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Error::invalid("segment length must be positive"));
    }
    let t = segment_samples(seconds, rec.samples_per_second);
    if t == 0 {
        return Err(Error::invalid("segment length rounds to zero samples"));
    }
    let count = rec.n_samples() / t;
    if count == 0 {
        return Err(Error::invalid(format!(
            "recording of {:.3} s holds no full {seconds} s segment",
            rec.duration_seconds()
        )));
    }
    Ok((0..count)
        .map(|k| {
            let mut data = rec.data.columns(k * t, t).into_owned();
            if centering == Centering::PerChannel {
                for mut row in data.row_iter_mut() {
                    let mean = row.mean();
                    row.add_scalar_mut(-mean);
                }
            }
            Segment {
                data,
                samples_per_second: rec.samples_per_second,
            }
        })
        .collect())
}

/// Horizontal concatenation of segments back into one block.
pub fn concatenate(segments: &[Segment]) -> Result<DMatrix<f64>> {
    let first = segments
        .first()
        .ok_or_else(|| Error::invalid("no segments to concatenate"))?;
    let n = first.n_channels();
    let total: usize = segments.iter().map(Segment::len).sum();
    let mut out = DMatrix::zeros(n, total);
    let mut at = 0;
    for s in segments {
        if s.n_channels() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.n_channels(),
            });
        }
        out.columns_mut(at, s.len()).copy_from(&s.data);
        at += s.len();
    }
    Ok(out)
}

/// Zero-phase 4th-order Butterworth band-pass of every channel.
pub fn bandpass(seg: &Segment, band: &BandSpec) -> Result<Segment> {
    band.validate(seg.samples_per_second)?;
    let filter = BandPassFilter::butterworth(band.low, band.high, seg.samples_per_second);
    Ok(apply_filter(seg, &filter))
}

fn apply_filter(seg: &Segment, filter: &BandPassFilter) -> Segment {
    let mut data = DMatrix::zeros(seg.n_channels(), seg.len());
    for i in 0..seg.n_channels() {
        let y = filter.filtfilt(&seg.row(i));
        for (j, v) in y.into_iter().enumerate() {
            data[(i, j)] = v;
        }
    }
    Segment {
        data,
        samples_per_second: seg.samples_per_second,
    }
}

/// Vertically stacks the band-passed copies of `seg`, band blocks in order.
pub fn stack_bands(seg: &Segment, bands: &[BandSpec]) -> Result<Segment> {
    if bands.is_empty() {
        return Err(Error::invalid("at least one band is required"));
    }
    let n = seg.n_channels();
    let mut data = DMatrix::zeros(n * bands.len(), seg.len());
    for (b, band) in bands.iter().enumerate() {
        let filtered = bandpass(seg, band)?;
        data.rows_mut(b * n, n).copy_from(&filtered.data);
    }
    Ok(Segment {
        data,
        samples_per_second: seg.samples_per_second,
    })
}

/// Fraction of (channel × segment) ADF tests that reject the unit root at 5%
/// when the recordings are cut into segments of `seconds`.
pub fn stationary_fraction(recs: &[&Recording], seconds: f64) -> Result<f64> {
    let mut tests = Vec::new();
    for rec in recs {
        for seg in segment(rec, seconds, Centering::None)? {
            for i in 0..seg.n_channels() {
                tests.push(seg.row(i));
            }
        }
    }
    let outcomes: Vec<Result<bool>> = tests
        .par_iter()
        .map(|series| {
            let lag = schwert_lag(series.len());
            match adf_statistic(series, lag) {
                Ok(stat) => Ok(rejects_unit_root(stat)),
                // a flat channel is trivially not a unit-root process
                Err(Error::DegenerateRegression(_)) => Ok(false),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut rejected = 0usize;
    for o in outcomes {
        if o? {
            rejected += 1;
        }
    }
    Ok(rejected as f64 / tests.len() as f64)
}

/// Largest candidate length (seconds) at which at least `rejection_quota` of
/// all ADF tests reject the unit root; the smallest candidate otherwise.
pub fn choose_segment_length(rec: &Recording, candidates: &[f64], rejection_quota: f64) -> Result<f64> {
    choose_segment_length_pooled(&[rec], candidates, rejection_quota)
}

/// [`choose_segment_length`] with the test outcomes pooled over several recordings.
pub fn choose_segment_length_pooled(
    recs: &[&Recording],
    candidates: &[f64],
    rejection_quota: f64,
) -> Result<f64> {
    let smallest = *candidates
        .first()
        .ok_or_else(|| Error::invalid("no candidate segment lengths"))?;
    if candidates.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("candidate segment lengths must be strictly ascending"));
    }
    if !(0.0..=1.0).contains(&rejection_quota) {
        return Err(Error::invalid("rejection quota must lie in [0, 1]"));
    }
    if recs.is_empty() {
        return Err(Error::invalid("no recordings to test"));
    }
    if candidates.len() == 1 {
        return Ok(smallest);
    }
    let mut best = None;
    for &c in candidates {
        let fits = recs
            .iter()
            .all(|r| segment_samples(c, r.samples_per_second()) <= r.n_samples());
        if !fits {
            break;
        }
        if stationary_fraction(recs, c)? >= rejection_quota {
            best = Some(c);
        }
    }
    Ok(best.unwrap_or(smallest))
}
