//! Data-driven forward kinematics for soft robots with distribution-free
//! prediction intervals.
//!
//! The crate maps actuation commands `u` to tip positions `x` with a pool of
//! regressors (least squares, LASSO, random forest, gradient boosting), picks
//! the best one on a validation split, and wraps it with split conformal
//! prediction. Conformalized quantile regression is available for comparison.

pub mod config;
pub mod conformal;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod models;
pub mod pipeline;

pub use error::{Error, Result};
