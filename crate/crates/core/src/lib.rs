//! Changes-in-changes estimation for ordered outcomes that may be underreported.
//!
//! The observed outcome is `C = min(Y, R)`, where `Y` is true consumption and
//! `R` the level up to which a respondent reports truthfully. Both follow
//! threshold-crossing models with cutoffs normalized to 0 and 1, and their
//! unobservables are coupled by a bivariate copula.
//!
//! Modules:
//! - [`stats_core`]: normal distribution functions, discrete CDFs and their
//!   generalized inverses.
//! - [`copula`]: Frank, Clayton and independence copulas, Spearman calibration
//!   and sampling.
//! - [`ordered_model`]: per-cell tail probabilities, likelihood and simulation.
//! - [`estimator`]: maximum likelihood fits, counterfactual parameters,
//!   distributional treatment effects, delta-method errors and the pre-trend
//!   likelihood-ratio test.
//! - [`bounds`]: nonparametric bounds, smooth envelopes and bootstrap bands.
//! - [`montecarlo`]: simulation designs, bias/RMSE tables and separable DGPs.

pub mod bounds;
pub mod copula;
mod error;
pub mod estimator;
pub mod montecarlo;
pub mod optim;
pub mod ordered_model;
pub mod rng;
pub mod stats_core;

pub use error::{Error, Result};
