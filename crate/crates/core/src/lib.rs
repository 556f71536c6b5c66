//! Glucose forecasting from continuous glucose monitor (CGM) data.
//!
//! The crate covers the whole experimental pipeline:
//!
//! - [`ingest`]: CSV readers for CGM readings and patient records, corpus
//!   statistics, and a deterministic synthetic corpus generator.
//! - [`pipeline`]: segmentation into gap-free sequences, sliding windows of
//!   132 inputs + 12 targets, and sequence-level k-fold splits that keep
//!   train and test readings disjoint.
//! - [`stats`]: feature covariance/correlation and Gaussian-mixture patient
//!   clustering.
//! - [`baseline`], [`hmm`], [`lstm`]: recursive multi-step forecasters behind
//!   the common [`Forecaster`] trait.
//! - [`metrics`]: RMSE, normalized second-difference energy, threshold
//!   precision/recall/F1, Clarke error-grid zones, and per-fold reports.
//! - [`bolus`]: the standard bolus calculator.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the command-line tool uses.

// `!(x > 0.0)` is used on purpose so NaN fails validation; index loops in the
// numeric kernels mirror the matrix notation and fix the summation order.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baseline;
pub mod bolus;
pub mod error;
pub mod forecast;
pub mod hmm;
pub mod ingest;
pub mod lstm;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod stats;
pub mod units;

pub use error::{Error, ErrorKind, Result};
pub use forecast::Forecaster;
pub use scalar::Real;

pub type Lstm = lstm::LstmNetwork<f64>;
pub type LstmModel = lstm::LstmForecaster<f64>;
pub type Hmm = hmm::HmmModel<f64>;
pub type HmmModel = hmm::HmmForecaster<f64>;
pub type Gmm = stats::GmmModel<f64>;
pub type Features = stats::FeatureMatrix<f64>;
pub type Pair = units::ForecastPair<f64>;
