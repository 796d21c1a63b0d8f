//! SPD-matrix features of multichannel recordings on Riemannian manifolds,
//! sparse elastic-net regression, and repeated nested cross-validation.
//!
//! The pipeline runs bottom-up through the modules:
//!
//! - [`spd`]: symmetric eigendecomposition and spectral matrix functions.
//! - [`manifold`]: Euclidean, Log-Euclidean and affine-invariant distances,
//!   means, and tangent-space mapping.
//! - [`signal`]: segmentation, stationarity search, Butterworth filter bank.
//! - [`estimators`]: covariance and Kendall matrices, subject-level features.
//! - [`regression`]: standardization and elastic net by coordinate descent.
//! - [`evaluation`]: nested cross-validation, RMSE summaries, model comparison.
//! - [`synth`]: seeded synthetic cohorts with planted ground truth.
//! - [`io`]: on-disk formats for matrices, recordings and feature tables.

pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod io;
pub mod manifold;
pub mod pipeline;
pub mod regression;
pub mod signal;
pub mod spd;
pub mod synth;

pub use error::{Error, ErrorClass, Result};

pub use nalgebra;
