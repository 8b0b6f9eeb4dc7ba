//! Joint (VaR, MES) regression by two-step M-estimation.
//!
//! The first step fits a conditional quantile (VaR) model for a distress
//! series by pinball-loss minimization; the second step fits the conditional
//! mean of an outcome given a VaR exceedance (the marginal expected
//! shortfall) by truncated least squares. Sandwich covariance estimation
//! provides standard errors for both parameter blocks, including the
//! propagation of first-step noise into the second step.
//!
//! On top of the estimator the crate ships the expected-shortfall special
//! case and ES decompositions, a rolling-window comparator regression, a
//! reproducible Monte Carlo harness for the estimator's sampling behavior,
//! and an equal-risk-contribution portfolio allocator driven by MES
//! forecasts.

pub mod brs;
pub mod data;
pub mod error;
pub mod es;
pub mod inference;
pub mod linalg;
pub mod mes;
mod optim;
pub mod portfolio;
pub mod quantile;
pub mod sim;
pub mod special;

pub use data::{load_csv, validate, CsvSchema, Dataset, Link, LinkFn, ModelSpec};
pub use error::{Error, Result};
pub use mes::{fit_joint, fit_mes, JointFit, MesFit};
pub use quantile::{fit_var, pinball_loss, predict_var, VarFit};

pub use nalgebra;
