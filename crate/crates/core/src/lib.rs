//! Estimate the intention-to-treat effect of an active control against
//! placebo in a trial that cannot ethically randomize to placebo, by fusing
//! historical placebo-controlled data.
//!
//! The estimand decomposes per covariate profile into a conditional
//! instrumented contrast (outcome shift per unit of treatment uptake,
//! learned in a historical trial that randomized placebo against the
//! active control) scaled by the counterfactual compliance rate (learned in
//! a historical trial of the same active control), then averaged over the
//! target population. The crate provides:
//!
//! * [`data`]: multi-trial patient-level datasets, CSV IO, role mapping,
//!   and report-only validation diagnostics;
//! * [`nuisance`]: ridge-stabilized GLM learners for conditional means, arm
//!   contrasts, participation, and assignment probabilities;
//! * [`estimators`]: outcome-regression and influence-function estimators
//!   for the design and post-hoc settings, plus the benchmark comparators;
//! * [`bounds`]: nonparametric partial-identification bounds;
//! * [`sensitivity`]: deviation-parameter sweeps around point estimates;
//! * [`inference`]: stratified bootstrap, influence-function variance
//!   intervals, and cross-fitting;
//! * [`simulation`]: the synthetic data-generating processes and Monte
//!   Carlo harness used to validate operating characteristics.

pub mod bounds;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod nuisance;
pub mod rng;
pub mod sensitivity;
pub mod simulation;

pub use error::{Error, ErrorClass, Result};

/// Library version, embedded in emitted run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
