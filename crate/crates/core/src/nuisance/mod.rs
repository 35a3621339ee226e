//! Nuisance functions for the fusion estimators: per-cell conditional means
//! μ_{·,z}(X; s), their arm contrasts δ(X; s), trial-participation
//! propensities f(S | X), and assignment probabilities f(Z | X, S).
//!
//! Every learner runs inside one ridge-stabilized GLM engine. The flexible
//! option is a cubic B-spline expansion of each continuous covariate; with
//! zero interior knots it degenerates to the plain linear fit.

mod assignment;
mod design;
mod glm;
mod participation;

pub use assignment::{AssignmentFit, AssignmentModel};
pub use design::{DesignLayout, DesignMatrix, Term};
pub use glm::{
    cell_rows, expit, fit_cell, fit_glm, fit_glm_rows, fit_glm_with, ConditionalMeanModel,
    FitMeta, RIDGE_ESCALATED,
};
pub use participation::{fit_participation, fit_participation_rows, ParticipationModel};

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};

/// Floor applied to fitted probabilities that end up in denominators
/// (participation, assignment, and logit conditional means). Guards the
/// weighting terms against exploding when a propensity collapses.
pub const EPS_PROBABILITY: f64 = 1e-3;

/// Binary endpoint a conditional-mean model targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    /// Outcome.
    Y,
    /// Treatment received.
    D,
}

impl Endpoint {
    pub fn column(self) -> &'static str {
        match self {
            Endpoint::Y => "y",
            Endpoint::D => "d",
        }
    }
}

/// Link function of a GLM fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Identity,
}

/// Covariate expansion used by a GLM fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Basis {
    /// Intercept plus each covariate untransformed.
    Linear,
    /// Cubic B-spline expansion of each continuous covariate with the given
    /// number of interior knots (at empirical quantiles). Zero knots is
    /// identical to `Linear`.
    Spline { interior_knots: usize },
}

/// Specification of one GLM fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmSpec {
    pub link: Link,
    pub basis: Basis,
    #[serde(default = "GlmSpec::default_max_iterations")]
    pub max_iterations: usize,
    /// Convergence threshold on the sup-norm of the mean penalized score.
    #[serde(default = "GlmSpec::default_tolerance")]
    pub tolerance: f64,
    /// Ridge penalty applied to every coefficient.
    #[serde(default = "GlmSpec::default_ridge")]
    pub ridge: f64,
}

impl GlmSpec {
    pub fn new(link: Link, basis: Basis) -> Self {
        GlmSpec {
            link,
            basis,
            max_iterations: Self::default_max_iterations(),
            tolerance: Self::default_tolerance(),
            ridge: Self::default_ridge(),
        }
    }

    /// Logistic regression on the untransformed covariates.
    pub fn logit_linear() -> Self {
        Self::new(Link::Logit, Basis::Linear)
    }

    /// Logistic regression on a cubic spline expansion (4 interior knots).
    pub fn logit_spline() -> Self {
        Self::new(Link::Logit, Basis::Spline { interior_knots: 4 })
    }

    fn default_max_iterations() -> usize {
        100
    }

    fn default_tolerance() -> f64 {
        1e-8
    }

    fn default_ridge() -> f64 {
        1e-8
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be ≥ 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be > 0".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidConfig("ridge must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Arm contrast δ(X; s) = μ(X, Z=1; s) − μ(X, Z=0; s) for one endpoint in
/// one trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaFunction {
    pub minuend: ConditionalMeanModel,
    pub subtrahend: ConditionalMeanModel,
    pub endpoint: Endpoint,
}

impl DeltaFunction {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.minuend.predict(x)? - self.subtrahend.predict(x)?)
    }

    pub fn predict_encoded(&self, row: &[f64]) -> f64 {
        self.minuend.predict_encoded(row).0 - self.subtrahend.predict_encoded(row).0
    }
}

/// Fit the two arm models of δ(X; s) for `endpoint` within `trial`.
pub fn fit_delta(
    ds: &TrialDataset,
    trial: &str,
    endpoint: Endpoint,
    spec: &GlmSpec,
) -> Result<DeltaFunction> {
    let layout = DesignLayout::from_dataset(ds, spec);
    let dm = layout.matrix(ds);
    let minuend = fit_glm_with(ds, &layout, &dm, trial, 1, endpoint, spec, None)?;
    let subtrahend = fit_glm_with(ds, &layout, &dm, trial, 0, endpoint, spec, None)?;
    Ok(DeltaFunction {
        minuend,
        subtrahend,
        endpoint,
    })
}
