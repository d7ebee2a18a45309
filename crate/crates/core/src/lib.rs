//! Covariate-calibrated effect estimation for matched-pair cluster
//! randomized designs.
//!
//! Patient-level data are reduced to one calibrated difference per pair by
//! fitting a cell-intercept outcome model and averaging each arm's fitted
//! mean function over the pair's pooled covariate distribution. The pair
//! differences then feed first-level, two-level (MLE, profile likelihood,
//! Bayes) and randomization estimators of the average effect.

pub mod calibration;
pub mod config;
pub mod diagnostics;
pub mod effects;
pub mod error;
pub mod glm;
pub mod io;
pub mod model;
pub mod numeric;
pub mod permutation;
pub mod report;
pub mod result1;
pub mod stats;

pub use error::{Error, Result};
