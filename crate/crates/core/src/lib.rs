//! Causal targeting toolkit.
//!
//! The crate estimates heterogeneous treatment effects of a binary
//! intervention on a binary outcome with honest causal forests, evaluates
//! targeting rules with cross-fitted doubly-robust (AIPW) scores, and compares
//! causal, predictive and hybrid ways of ranking units for treatment.
//!
//! The pipeline, bottom up:
//!
//! * [`dgp`] draws synthetic randomized trials with known ground truth and
//!   re-draws outcomes from fitted estimates with a heterogeneity multiplier.
//! * [`forest`] grows honest regression and causal forests.
//! * [`link`], [`logistic`], [`folds`], [`aipw`] and [`ate`] provide the
//!   GLM machinery, cross-fitted nuisances and average-effect estimators.
//! * [`heterogeneity`] runs calibration, GATES and group comparisons.
//! * [`targeting`] builds scoring policies, policy-value curves, RATE tests
//!   and the semi-synthetic heterogeneity study.

pub mod aipw;
pub mod ate;
pub mod data;
pub mod dgp;
mod error;
pub mod folds;
pub mod forest;
pub mod heterogeneity;
pub mod io;
pub mod link;
pub mod logistic;
mod par;
pub mod rng;
pub mod stats;
pub mod svg;
pub mod targeting;

pub use crate::data::{Covariates, Dataset, Truth};
pub use crate::error::{Error, Result};
