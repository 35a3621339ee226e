//! Point estimators of the target-trial intention-to-treat effect.
//!
//! The estimand is the intention-to-treat contrast of active control versus
//! (counterfactual) placebo in the target trial: the conditional Wald ratio
//! identified in the historical placebo-controlled trial, scaled by a
//! cross-trial compliance factor and standardized to the target covariate
//! distribution. Each estimand version comes in a plug-in regression form
//! and a semiparametric influence-function form: the design-stage versions
//! take the compliance factor from a second historical trial, the post-hoc
//! versions take it from observed target uptake against a crossover
//! sensitivity parameter. Naive constancy standardizations, a no-crossover
//! shortcut, a linear structural CATE solver, and counterfactual incidence
//! arithmetic round out the set.

mod engine;
mod point;

pub use engine::{
    design_columns_crossfit, posthoc_columns_crossfit, ColumnsFamily, DesignNuisances,
    NuisanceColumns, NuisanceSpecs, PosthocNuisances, Prepared, SpecKind,
};
pub use point::PointEvaluation;

use serde::{Deserialize, Serialize};

use crate::data::{Role, TrialDataset};
use crate::error::{Error, Result};
use crate::inference::{eif_variance_ci, CrossfitPlan};
use crate::linalg::lu_solve;
use crate::nuisance::{AssignmentModel, DeltaFunction, Endpoint};

/// Floor on |δ̂^D(X; h₁)|: rows below it are excluded from target averages
/// (with a diagnostic count) and the pointwise Wald ratio refuses to divide.
pub const EPS_DENOMINATOR: f64 = 1e-3;

/// Which estimator produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    RegDesign,
    EifDesign,
    RegPosthoc,
    EifPosthoc,
    #[serde(rename = "constancy-1")]
    Constancy1,
    #[serde(rename = "constancy-2")]
    Constancy2,
    NoCrossover,
    GEstimation,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::RegDesign => "reg-design",
            Method::EifDesign => "eif-design",
            Method::RegPosthoc => "reg-posthoc",
            Method::EifPosthoc => "eif-posthoc",
            Method::Constancy1 => "constancy-1",
            Method::Constancy2 => "constancy-2",
            Method::NoCrossover => "no-crossover",
            Method::GEstimation => "g-estimation",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything an estimate run wants to disclose about itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Wald ratios (per target row) or final estimates hard-thresholded into
    /// [−1, 1].
    pub clamp_count: usize,
    /// Target rows excluded by the |δ̂^D| floor.
    pub denominator_floor_count: usize,
    /// Nuisance predictions floored or range-clamped.
    pub prediction_floor_count: usize,
    pub n_target_rows: usize,
    pub n_target_rows_used: usize,
    pub nuisance_specs: NuisanceSpecs,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub crossfit_folds: Option<usize>,
    /// Trials whose participation probabilities sat at the floor for more
    /// than half their rows — reported, not fatal.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub non_overlap_trials: Vec<String>,
    pub separation_detected: bool,
}

/// A point estimate with optional uncertainty and full diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateResult {
    /// Always `"itt"` for the estimators in this module.
    pub estimand: String,
    pub method: Method,
    pub point: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub standard_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci_method: Option<String>,
    pub diagnostics: Diagnostics,
}

impl EstimateResult {
    /// Attach a confidence interval, widening it if necessary so that
    /// `lo ≤ point ≤ hi` always holds.
    pub fn attach_ci(&mut self, lo: f64, hi: f64, method: &str) {
        self.ci = Some((lo.min(self.point), hi.max(self.point)));
        self.ci_method = Some(method.to_string());
    }
}

/// Assumed placebo-arm uptake in the target trial, μ*_{D,0}(X; t). The
/// target assigns everyone to active control, so this crossover rate is not
/// identified and enters as a sensitivity parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SensitivityParameter {
    /// Constant uptake in [0, 1].
    Constant { value: f64 },
    /// Logistic function of the covariates: expit(c₀ + Σ c_j x_j).
    Logistic { coefficients: Vec<f64> },
}

impl SensitivityParameter {
    /// No crossover at all: μ*_{D,0} ≡ 0.
    pub fn zero() -> Self {
        SensitivityParameter::Constant { value: 0.0 }
    }

    pub fn constant(value: f64) -> Result<Self> {
        let s = SensitivityParameter::Constant { value };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SensitivityParameter::Constant { value } => {
                if !value.is_finite() || *value < 0.0 || *value > 1.0 {
                    return Err(Error::InvalidConfig(format!(
                        "sensitivity parameter must lie in [0, 1], got {value}"
                    )));
                }
            }
            SensitivityParameter::Logistic { coefficients } => {
                if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "logistic sensitivity parameter needs finite coefficients".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Evaluate μ*_{D,0}(x); always lands in [0, 1].
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match self {
            SensitivityParameter::Constant { value } => Ok(*value),
            SensitivityParameter::Logistic { coefficients } => {
                if coefficients.len() != x.len() + 1 {
                    return Err(Error::DimensionMismatch {
                        expected: coefficients.len().saturating_sub(1),
                        got: x.len(),
                    });
                }
                let eta = coefficients[0]
                    + coefficients[1..]
                        .iter()
                        .zip(x)
                        .map(|(c, v)| c * v)
                        .sum::<f64>();
                Ok(crate::nuisance::expit(eta))
            }
        }
    }
}

/// Hard threshold for estimates of a contrast between binary-outcome means:
/// identity inside [−1, 1], the nearer endpoint outside. Idempotent.
pub fn clamp_estimate(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("estimate value {x}")));
    }
    Ok(x.clamp(-1.0, 1.0))
}

/// Pointwise conditional Wald ratio δ^Y(x)/δ^D(x), thresholded into [−1, 1].
pub fn conditional_wald(delta_y: &DeltaFunction, delta_d: &DeltaFunction, x: &[f64]) -> Result<f64> {
    conditional_wald_flagged(delta_y, delta_d, x).map(|(v, _)| v)
}

/// As [`conditional_wald`], also reporting whether the threshold moved the
/// value.
pub fn conditional_wald_flagged(
    delta_y: &DeltaFunction,
    delta_d: &DeltaFunction,
    x: &[f64],
) -> Result<(f64, bool)> {
    let dy = delta_y.predict(x)?;
    let dd = delta_d.predict(x)?;
    if dd.abs() < EPS_DENOMINATOR {
        return Err(Error::DenominatorNearZero(dd));
    }
    let raw = dy / dd;
    let clamped = clamp_estimate(raw)?;
    Ok((clamped, clamped != raw))
}

fn assemble(
    method: Method,
    eval: &PointEvaluation,
    cols: &NuisanceColumns,
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
    seed: Option<u64>,
    crossfit_folds: Option<usize>,
) -> EstimateResult {
    EstimateResult {
        estimand: "itt".to_string(),
        method,
        point: eval.point,
        standard_error: None,
        ci: None,
        ci_method: None,
        diagnostics: Diagnostics {
            clamp_count: eval.clamp_count,
            denominator_floor_count: eval.denominator_floor_count,
            prediction_floor_count: cols.prediction_floor_count,
            n_target_rows: eval.n_target,
            n_target_rows_used: eval.n_target_used,
            nuisance_specs: specs.clone(),
            seed,
            crossfit_folds,
            non_overlap_trials: cols.non_overlap_trials(ds),
            separation_detected: cols.separation_detected,
        },
    }
}

fn all_rows(ds: &TrialDataset) -> Vec<usize> {
    (0..ds.n_rows()).collect()
}

/// Post-hoc estimators need observed assignment and uptake in the target
/// trial; its absence is an analysis-selection problem, not a data defect.
pub(crate) fn require_target_compliance(ds: &TrialDataset) -> Result<()> {
    for i in 0..ds.n_rows() {
        if ds.role_of_row(i) == Role::Target && (ds.z(i).is_none() || ds.d(i).is_none()) {
            return Err(Error::MissingRole(
                "target compliance columns (z, d) are required for post-hoc estimators".into(),
            ));
        }
    }
    Ok(())
}

/// Evaluate the regression (plug-in) estimator on prebuilt columns over a
/// row multiset (`None` = every row once). Public so oracle-nuisance tests
/// and resampling closures can drive the exact production arithmetic.
pub fn reg_estimate_from_columns(
    ds: &TrialDataset,
    cols: &NuisanceColumns,
    rows: Option<&[usize]>,
) -> Result<PointEvaluation> {
    match rows {
        Some(r) => point::reg_point(ds, cols, r),
        None => point::reg_point(ds, cols, &all_rows(ds)),
    }
}

/// Evaluate the influence-function estimator on prebuilt columns over a row
/// multiset (`None` = every row once). `want_eif` additionally returns the
/// per-row influence values (mean exactly zero at the plug-in estimate).
pub fn eif_estimate_from_columns(
    ds: &TrialDataset,
    cols: &NuisanceColumns,
    rows: Option<&[usize]>,
    want_eif: bool,
) -> Result<PointEvaluation> {
    match rows {
        Some(r) => point::eif_point(ds, cols, r, want_eif),
        None => point::eif_point(ds, cols, &all_rows(ds), want_eif),
    }
}

/// Design-stage regression estimator: mean over target rows of the
/// thresholded Wald ratio from historical trial 1 times δ̂^D from historical
/// trial 2. The two historical roles may share one trial, in which case the
/// product collapses to the standardized outcome contrast.
pub fn estimate_itt_reg_design(ds: &TrialDataset, specs: &NuisanceSpecs) -> Result<EstimateResult> {
    let prepared = Prepared::new(ds, specs)?;
    let fits = prepared.fit_design(None, None, false)?;
    let cols = prepared.design_columns(&fits, None)?;
    let eval = point::reg_point(ds, &cols, &all_rows(ds))?;
    Ok(assemble(
        Method::RegDesign,
        &eval,
        &cols,
        ds,
        &prepared.specs,
        None,
        None,
    ))
}

/// Design-stage influence-function estimator: the plug-in term plus
/// reweighted residual corrections from both historical trials, with
/// optional cross-fitting of the nuisance models. Attaches the
/// influence-function variance CI.
pub fn estimate_itt_eif_design(
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
    assignment: &AssignmentModel,
    crossfit: &CrossfitPlan,
) -> Result<EstimateResult> {
    let prepared = Prepared::new(ds, specs)?;
    if prepared.collapsed {
        return Err(Error::MissingRole("historical2".into()));
    }
    crossfit.validate()?;
    let cols = design_columns_crossfit(&prepared, crossfit, Some(assignment), true)?;
    let eval = point::eif_point(ds, &cols, &all_rows(ds), true)?;
    let folds = (crossfit.k > 1).then_some(crossfit.k);
    let seed = (crossfit.k > 1).then_some(crossfit.seed);
    let mut result = assemble(
        Method::EifDesign,
        &eval,
        &cols,
        ds,
        &prepared.specs,
        seed,
        folds,
    );
    let (se, (lo, hi)) = eif_variance_ci(&eval.eif_values, eval.point)?;
    result.standard_error = Some(se);
    result.attach_ci(lo, hi, "eif-variance");
    Ok(result)
}

fn reg_posthoc_impl(
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
    sens: &SensitivityParameter,
    method: Method,
) -> Result<EstimateResult> {
    sens.validate()?;
    require_target_compliance(ds)?;
    let prepared = Prepared::new(ds, specs)?;
    let fits = prepared.fit_posthoc(None, None, false)?;
    let cols = prepared.posthoc_columns(&fits, sens, None)?;
    let eval = point::reg_point(ds, &cols, &all_rows(ds))?;
    Ok(assemble(method, &eval, &cols, ds, &prepared.specs, None, None))
}

/// Post-hoc regression estimator: Wald ratio from historical trial 1 times
/// δ̂^{D*}(X; t) = μ̂_{D,1}(X; t) − μ*_{D,0}(X; t), averaged over target rows.
pub fn estimate_itt_reg_posthoc(
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
    sens: &SensitivityParameter,
) -> Result<EstimateResult> {
    reg_posthoc_impl(ds, specs, sens, Method::RegPosthoc)
}

/// Post-hoc influence-function estimator: historical-1 residual correction
/// plus a target-side uptake residual on the assigned (Z = 1) arm.
pub fn estimate_itt_eif_posthoc(
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
    sens: &SensitivityParameter,
    assignment: &AssignmentModel,
    crossfit: &CrossfitPlan,
) -> Result<EstimateResult> {
    sens.validate()?;
    require_target_compliance(ds)?;
    let prepared = Prepared::new(ds, specs)?;
    crossfit.validate()?;
    let cols = posthoc_columns_crossfit(&prepared, crossfit, sens, Some(assignment), true)?;
    let eval = point::eif_point(ds, &cols, &all_rows(ds), true)?;
    let folds = (crossfit.k > 1).then_some(crossfit.k);
    let seed = (crossfit.k > 1).then_some(crossfit.seed);
    let mut result = assemble(
        Method::EifPosthoc,
        &eval,
        &cols,
        ds,
        &prepared.specs,
        seed,
        folds,
    );
    let (se, (lo, hi)) = eif_variance_ci(&eval.eif_values, eval.point)?;
    result.standard_error = Some(se);
    result.attach_ci(lo, hi, "eif-variance");
    Ok(result)
}

/// Conditional-constancy standardization: mean over target rows of the
/// outcome contrast δ̂^Y(X; source) fit in one historical trial. This is the
/// naive borrowing estimator; it is consistent only when that contrast
/// transports unchanged to the target population.
pub fn estimate_itt_constancy(
    ds: &TrialDataset,
    source: Role,
    specs: &NuisanceSpecs,
) -> Result<EstimateResult> {
    let method = match source {
        Role::Historical1 => Method::Constancy1,
        Role::Historical2 => Method::Constancy2,
        Role::Target => {
            return Err(Error::InvalidConfig(
                "constancy source must be a historical trial".into(),
            ))
        }
    };
    let prepared = Prepared::new(ds, specs)?;
    let label = match source {
        Role::Historical1 => prepared.h1_label.clone(),
        _ => prepared.h2_label.clone(),
    };
    let mu1 = prepared.fit_cell_model(SpecKind::Outcome, &label, 1, Endpoint::Y, None, None)?;
    let mu0 = prepared.fit_cell_model(SpecKind::Outcome, &label, 0, Endpoint::Y, None, None)?;
    let n = ds.n_rows();
    let mut delta_y = vec![f64::NAN; n];
    let mut floor_count = 0usize;
    for (i, slot) in delta_y.iter_mut().enumerate() {
        let row = prepared.design_row(SpecKind::Outcome, i);
        let (y0, fl0) = mu0.predict_encoded(row);
        let (y1, fl1) = mu1.predict_encoded(row);
        floor_count += usize::from(fl0) + usize::from(fl1);
        // Same expression as the design column fill, so the collapsed
        // design estimator and constancy-1 agree bit for bit.
        *slot = y1 - y0;
    }
    let (mean, n_target) = point::mean_over_target(&delta_y, ds, &all_rows(ds))?;
    let point_val = clamp_estimate(mean)?;
    Ok(EstimateResult {
        estimand: "itt".to_string(),
        method,
        point: point_val,
        standard_error: None,
        ci: None,
        ci_method: None,
        diagnostics: Diagnostics {
            clamp_count: usize::from(point_val != mean),
            denominator_floor_count: 0,
            prediction_floor_count: floor_count,
            n_target_rows: n_target,
            n_target_rows_used: n_target,
            nuisance_specs: prepared.specs.clone(),
            seed: None,
            crossfit_folds: None,
            non_overlap_trials: Vec::new(),
            separation_detected: mu1.convergence.separation_detected
                || mu0.convergence.separation_detected,
        },
    })
}

/// No-crossover estimator: assumes nobody in the target placebo-counterfactual
/// arm would take the active treatment, i.e. the post-hoc estimator with
/// μ*_{D,0} ≡ 0. Shares the post-hoc code path exactly.
pub fn estimate_itt_no_crossover(
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
) -> Result<EstimateResult> {
    reg_posthoc_impl(ds, specs, &SensitivityParameter::zero(), Method::NoCrossover)
}

/// Solve the linear structural CATE estimating equation
/// (1/N) Σ h(X_i)·(Y_i − D_i·αᵀ(1, X_i))·(2Z_i − 1)/f(Z_i|X_i) = 0 on one
/// trial's rows. `h` defaults to the model basis (1, X) and must return one
/// value per coefficient; the closed-form solution is verified to satisfy
/// the equation to sup-norm 1e-8.
pub fn fit_structural_cate(
    ds: &TrialDataset,
    trial: Role,
    h: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    assignment: &AssignmentModel,
) -> Result<Vec<f64>> {
    let label = ds.roles().label_of(trial).to_string();
    let p = 1 + ds.n_covariates();
    let rows: Vec<usize> = (0..ds.n_rows())
        .filter(|&i| ds.trial_label(i) == label)
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyRole(label));
    }
    let mut a = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    for &i in &rows {
        let (z, d, y) = match (ds.z(i), ds.d(i), ds.y(i)) {
            (Some(z), Some(d), Some(y)) => (z, f64::from(d), f64::from(y)),
            _ => {
                return Err(Error::MissingRequiredColumn {
                    column: "z/d/y".into(),
                    trial: label,
                    role: "structural-cate".into(),
                })
            }
        };
        let x = ds.covariate_row(i);
        let mut basis = Vec::with_capacity(p);
        basis.push(1.0);
        basis.extend_from_slice(&x);
        let hx = match h {
            Some(f) => f(&x),
            None => basis.clone(),
        };
        if hx.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: hx.len(),
            });
        }
        let p1 = assignment.prob_z1(&label, &x)?;
        let fz = if z == 1 { p1 } else { 1.0 - p1 };
        let w = (2.0 * f64::from(z) - 1.0) / fz;
        for r in 0..p {
            b[r] += w * hx[r] * y;
            for c in 0..p {
                a[r * p + c] += w * hx[r] * d * basis[c];
            }
        }
    }
    let inv_n = 1.0 / rows.len() as f64;
    for v in &mut a {
        *v *= inv_n;
    }
    for v in &mut b {
        *v *= inv_n;
    }
    let alpha = lu_solve(&a, &b, p)?;
    // Residual check of the estimating equation itself.
    let mut sup = 0.0f64;
    for r in 0..p {
        let mut s = b[r];
        for c in 0..p {
            s -= a[r * p + c] * alpha[c];
        }
        sup = sup.max(s.abs());
    }
    if !sup.is_finite() || sup > 1e-8 {
        return Err(Error::SingularSystem);
    }
    Ok(alpha)
}

/// Counterfactual placebo-arm incidence implied by an active-control
/// incidence and an ITT estimate (active control minus placebo, so a
/// protective effect is negative).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualIncidence {
    pub active_control_incidence: f64,
    pub itt_point: f64,
    /// active-control incidence − ITT point.
    pub placebo_incidence: f64,
    /// The arithmetic produced a negative incidence — reported, not fatal.
    pub negative_incidence: bool,
    /// experimental incidence − placebo incidence, when supplied.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub experimental_contrast: Option<f64>,
    /// 100·(placebo − experimental)/placebo, when computable.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub percent_reduction: Option<f64>,
}

/// Back out the counterfactual placebo incidence from an active-control
/// incidence and the ITT estimate, optionally contrasting an experimental
/// treatment's incidence against it.
pub fn counterfactual_placebo_incidence(
    ac_incidence: f64,
    itt: &EstimateResult,
    experimental_incidence: Option<f64>,
) -> Result<CounterfactualIncidence> {
    if !ac_incidence.is_finite() || ac_incidence < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "active-control incidence must be a nonnegative rate, got {ac_incidence}"
        )));
    }
    if let Some(e) = experimental_incidence {
        if !e.is_finite() || e < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "experimental incidence must be a nonnegative rate, got {e}"
            )));
        }
    }
    let placebo = ac_incidence - itt.point;
    let experimental_contrast = experimental_incidence.map(|e| e - placebo);
    let percent_reduction = match experimental_incidence {
        Some(e) if placebo > 0.0 => Some(100.0 * (placebo - e) / placebo),
        _ => None,
    };
    Ok(CounterfactualIncidence {
        active_control_incidence: ac_incidence,
        itt_point: itt.point,
        placebo_incidence: placebo,
        negative_incidence: placebo < 0.0,
        experimental_contrast,
        percent_reduction,
    })
}
