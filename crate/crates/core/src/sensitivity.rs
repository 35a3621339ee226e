//! Sensitivity analyses for the untestable borrowing assumptions.
//!
//! Three relaxations are supported. A [`LambdaPair`] quantifies hidden
//! confounding through two interaction scales whose product shifts the ITT
//! additively; [`lambda_adjust`] applies the shift and
//! [`sensitivity_interval`] takes the envelope of shifted confidence
//! intervals over a grid. [`cc_p_sweep`] re-estimates the post-hoc ITT over
//! a grid of assumed placebo-arm uptake constants. [`cate_scale`] damps the
//! borrowed stratum effect by a factor in (0, 1]. Each sweep is collected
//! into a [`SensitivityGrid`] that always carries the unrelaxed base
//! scenario.

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_itt_eif_posthoc, estimate_itt_reg_posthoc, EstimateResult, NuisanceSpecs,
    SensitivityParameter,
};
use crate::inference::CrossfitPlan;
use crate::nuisance::AssignmentModel;

/// Interaction scales of an unmeasured confounder with treatment uptake
/// (λ₁) and with assignment-conditional compliance (λ₂). Their product is
/// the additive bias of the product-form ITT estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPair {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LambdaPair {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let out = Self { lambda1, lambda2 };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda pair ({}, {}) must be finite",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }

    pub fn origin() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
        }
    }

    /// The additive shift λ₁·λ₂ this pair induces on the estimate.
    pub fn shift(&self) -> f64 {
        self.lambda1 * self.lambda2
    }
}

/// Symmetric 5x5 lattice on [-0.2, 0.2]^2, a conventional default region;
/// the plausible range is analyst-chosen, not implied by the data.
pub fn default_lambda_grid() -> Vec<LambdaPair> {
    let axis = [-0.2, -0.1, 0.0, 0.1, 0.2];
    let mut grid = Vec::with_capacity(25);
    for &l1 in &axis {
        for &l2 in &axis {
            grid.push(LambdaPair {
                lambda1: l1,
                lambda2: l2,
            });
        }
    }
    grid
}

/// Shift the point and both confidence-interval endpoints by λ₁·λ₂. The
/// standard error and every diagnostic are unchanged: the relaxation moves
/// the estimand, not the sampling noise.
pub fn lambda_adjust(base: &EstimateResult, lp: LambdaPair) -> EstimateResult {
    let mut out = base.clone();
    let shift = lp.shift();
    out.point += shift;
    out.ci = out.ci.map(|(lo, hi)| (lo + shift, hi + shift));
    out
}

/// Envelope of the shifted confidence intervals over a λ grid: the union of
/// all level-α intervals that are consistent with some pair in the grid.
pub fn sensitivity_interval(base: &EstimateResult, grid: &[LambdaPair]) -> Result<(f64, f64)> {
    let (lo, hi) = base.ci.ok_or_else(|| {
        Error::InvalidConfig("sensitivity interval needs a base confidence interval".into())
    })?;
    if grid.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    let mut out = (f64::INFINITY, f64::NEG_INFINITY);
    for lp in grid {
        lp.validate()?;
        let s = lp.shift();
        out.0 = out.0.min(lo + s);
        out.1 = out.1.max(hi + s);
    }
    Ok(out)
}

/// One evaluated relaxation scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityScenario {
    pub label: String,
    /// Set when this scenario is the unrelaxed reference point.
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub is_base: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cc_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<LambdaPair>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cate_scale: Option<f64>,
    pub estimate: EstimateResult,
}

/// A family of scenarios sharing one relaxation axis, always containing the
/// base scenario with every relaxation switched off.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityGrid {
    pub scenarios: Vec<SensitivityScenario>,
}

impl SensitivityGrid {
    pub fn validate(&self) -> Result<()> {
        if !self.scenarios.iter().any(|s| s.is_base) {
            return Err(Error::InvalidConfig(
                "sensitivity grid has no base scenario".into(),
            ));
        }
        Ok(())
    }

    /// Flat table for plotting: one row per scenario, blank cells for the
    /// relaxation axes a scenario does not use.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "label",
            "is_base",
            "cc_p",
            "lambda1",
            "lambda2",
            "cate_scale",
            "method",
            "point",
            "standard_error",
            "ci_lower",
            "ci_upper",
        ])
        .map_err(Error::Csv)?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.scenarios {
            w.write_record([
                s.label.clone(),
                s.is_base.to_string(),
                fmt(s.cc_p),
                fmt(s.lambda.map(|l| l.lambda1)),
                fmt(s.lambda.map(|l| l.lambda2)),
                fmt(s.cate_scale),
                s.estimate.method.to_string(),
                s.estimate.point.to_string(),
                fmt(s.estimate.standard_error),
                fmt(s.estimate.ci.map(|c| c.0)),
                fmt(s.estimate.ci.map(|c| c.1)),
            ])
            .map_err(Error::Csv)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::NonFinite(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Shared sweep scaffolding: evaluate `make` on every value, prepending the
/// base value when the caller's grid omits it.
fn sweep<T: Copy + PartialEq>(
    grid: &[T],
    base: T,
    mut make: impl FnMut(T, bool) -> Result<SensitivityScenario>,
) -> Result<SensitivityGrid> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("sensitivity grid is empty".into()));
    }
    let mut scenarios = Vec::with_capacity(grid.len() + 1);
    if !grid.contains(&base) {
        scenarios.push(make(base, true)?);
    }
    for &v in grid {
        scenarios.push(make(v, v == base)?);
    }
    Ok(SensitivityGrid { scenarios })
}

/// Re-estimate the post-hoc ITT over a grid of assumed constant placebo-arm
/// uptake rates, via the regression estimator. The zero entry is the
/// no-crossover analysis and anchors the grid.
pub fn cc_p_sweep(
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
    grid: &[f64],
) -> Result<SensitivityGrid> {
    sweep(grid, 0.0, |v, is_base| {
        let sens = SensitivityParameter::constant(v)?;
        Ok(SensitivityScenario {
            label: format!("cc-p={v}"),
            is_base,
            cc_p: Some(v),
            lambda: None,
            cate_scale: None,
            estimate: estimate_itt_reg_posthoc(ds, specs, &sens)?,
        })
    })
}

/// [`cc_p_sweep`] with the influence-function estimator, which also carries
/// a variance per grid point.
pub fn cc_p_sweep_eif(
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
    grid: &[f64],
    assignment: &AssignmentModel,
    crossfit: &CrossfitPlan,
) -> Result<SensitivityGrid> {
    sweep(grid, 0.0, |v, is_base| {
        let sens = SensitivityParameter::constant(v)?;
        Ok(SensitivityScenario {
            label: format!("cc-p={v}"),
            is_base,
            cc_p: Some(v),
            lambda: None,
            cate_scale: None,
            estimate: estimate_itt_eif_posthoc(ds, specs, &sens, assignment, crossfit)?,
        })
    })
}

/// Shift a product-form estimate over a λ grid. Pure arithmetic on the base
/// estimate; nothing is refit.
pub fn lambda_sweep(base: &EstimateResult, grid: &[LambdaPair]) -> Result<SensitivityGrid> {
    for lp in grid {
        lp.validate()?;
    }
    sweep(grid, LambdaPair::origin(), |lp, is_base| {
        Ok(SensitivityScenario {
            label: format!("lambda1={} lambda2={}", lp.lambda1, lp.lambda2),
            is_base,
            cc_p: None,
            lambda: Some(lp),
            cate_scale: None,
            estimate: lambda_adjust(base, lp),
        })
    })
}

/// Damp the borrowed stratum effect: the CATE factor of the product is
/// multiplied by `s` in (0, 1] before averaging, which scales the point, the
/// standard error, and the interval endpoints alike.
pub fn cate_scale(base: &EstimateResult, s: f64) -> Result<EstimateResult> {
    if !s.is_finite() || s <= 0.0 || s > 1.0 {
        return Err(Error::InvalidConfig(format!(
            "cate scale must lie in (0, 1], got {s}"
        )));
    }
    let mut out = base.clone();
    out.point *= s;
    out.standard_error = out.standard_error.map(|se| se * s);
    out.ci = out.ci.map(|(lo, hi)| (lo * s, hi * s));
    Ok(out)
}

/// Sweep of [`cate_scale`] factors; the undamped estimate anchors the grid.
pub fn cate_scale_sweep(base: &EstimateResult, grid: &[f64]) -> Result<SensitivityGrid> {
    sweep(grid, 1.0, |s, is_base| {
        Ok(SensitivityScenario {
            label: format!("cate-scale={s}"),
            is_base,
            cc_p: None,
            lambda: None,
            cate_scale: Some(s),
            estimate: cate_scale(base, s)?,
        })
    })
}
