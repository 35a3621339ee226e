//! Shared fitting engine for the fusion estimators.
//!
//! Design matrices and spline dictionaries are built once per dataset; every
//! refit (bootstrap replicate, cross-fitting fold) reuses them and selects
//! observations through row-index multisets. Estimators never see models
//! directly: they consume per-row nuisance value columns, which makes the
//! same estimator code serve fitted, fold-wise, and injected (oracle)
//! nuisances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::inference::CrossfitPlan;
use crate::nuisance::{
    fit_glm_rows, fit_participation_rows, AssignmentModel, ConditionalMeanModel, DesignLayout,
    DesignMatrix, Endpoint, GlmSpec, ParticipationModel,
};

use super::EPS_DENOMINATOR;

/// GLM specifications for the three nuisance groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpecs {
    /// Conditional outcome means μ_{Y,z}(X; s).
    pub outcome: GlmSpec,
    /// Conditional treatment-uptake means μ_{D,z}(X; s).
    pub treatment: GlmSpec,
    /// Trial-participation propensities f(S | X).
    pub participation: GlmSpec,
}

impl NuisanceSpecs {
    /// Logistic regressions on untransformed covariates everywhere.
    pub fn logit_linear() -> Self {
        NuisanceSpecs {
            outcome: GlmSpec::logit_linear(),
            treatment: GlmSpec::logit_linear(),
            participation: GlmSpec::logit_linear(),
        }
    }

    /// Logistic regressions on cubic spline expansions everywhere.
    pub fn logit_spline() -> Self {
        NuisanceSpecs {
            outcome: GlmSpec::logit_spline(),
            treatment: GlmSpec::logit_spline(),
            participation: GlmSpec::logit_spline(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.outcome.validate()?;
        self.treatment.validate()?;
        self.participation.validate()
    }
}

/// Which spec/layout group a fit belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecKind {
    Outcome,
    Treatment,
    Participation,
}

/// Dataset-level precomputation: one design layout and matrix per nuisance
/// group. Knot dictionaries come from the pooled dataset and stay fixed
/// across every refit, so bootstrap and fold fits share a single basis.
pub struct Prepared<'a> {
    pub ds: &'a TrialDataset,
    pub specs: NuisanceSpecs,
    pub t_label: String,
    pub h1_label: String,
    pub h2_label: String,
    pub collapsed: bool,
    outcome_layout: DesignLayout,
    outcome_dm: DesignMatrix,
    treatment_layout: DesignLayout,
    treatment_dm: DesignMatrix,
    participation_layout: DesignLayout,
    participation_dm: DesignMatrix,
}

impl<'a> Prepared<'a> {
    pub fn new(ds: &'a TrialDataset, specs: &NuisanceSpecs) -> Result<Self> {
        specs.validate()?;
        let roles = ds.roles();
        let outcome_layout = DesignLayout::from_dataset(ds, &specs.outcome);
        let treatment_layout = DesignLayout::from_dataset(ds, &specs.treatment);
        let participation_layout = DesignLayout::from_dataset(ds, &specs.participation);
        Ok(Prepared {
            ds,
            specs: specs.clone(),
            t_label: roles.target_label.clone(),
            h1_label: roles.historical1_label.clone(),
            h2_label: roles.historical2_effective().to_string(),
            collapsed: roles.collapsed(),
            outcome_dm: outcome_layout.matrix(ds),
            outcome_layout,
            treatment_dm: treatment_layout.matrix(ds),
            treatment_layout,
            participation_dm: participation_layout.matrix(ds),
            participation_layout,
        })
    }

    fn group(&self, kind: SpecKind) -> (&GlmSpec, &DesignLayout, &DesignMatrix) {
        match kind {
            SpecKind::Outcome => (&self.specs.outcome, &self.outcome_layout, &self.outcome_dm),
            SpecKind::Treatment => (
                &self.specs.treatment,
                &self.treatment_layout,
                &self.treatment_dm,
            ),
            SpecKind::Participation => (
                &self.specs.participation,
                &self.participation_layout,
                &self.participation_dm,
            ),
        }
    }

    /// Rows of a (trial, arm) cell drawn from `pool` (a row multiset; the
    /// full dataset when `None`).
    fn cell_rows(&self, pool: Option<&[usize]>, trial: &str, arm: u8) -> Vec<usize> {
        let pick = |i: usize| self.ds.trial_label(i) == trial && self.ds.z(i) == Some(arm);
        match pool {
            Some(rows) => rows.iter().copied().filter(|&i| pick(i)).collect(),
            None => (0..self.ds.n_rows()).filter(|&i| pick(i)).collect(),
        }
    }

    /// Fit one conditional-mean cell, optionally on a row multiset and with
    /// warm-started coefficients.
    pub fn fit_cell_model(
        &self,
        kind: SpecKind,
        trial: &str,
        arm: u8,
        endpoint: Endpoint,
        pool: Option<&[usize]>,
        init: Option<&[f64]>,
    ) -> Result<ConditionalMeanModel> {
        let (spec, layout, dm) = self.group(kind);
        let rows = self.cell_rows(pool, trial, arm);
        fit_glm_rows(self.ds, layout, dm, &rows, trial, arm, endpoint, spec, init)
    }

    /// Fit the participation model over `labels` (class order as given).
    pub fn fit_participation_model(
        &self,
        labels: &[String],
        pool: Option<&[usize]>,
        init: Option<&[f64]>,
    ) -> Result<ParticipationModel> {
        let (spec, layout, dm) = self.group(SpecKind::Participation);
        let pick = |i: usize| labels.iter().position(|l| l == self.ds.trial_label(i));
        let mut rows = Vec::new();
        let mut class = Vec::new();
        let mut push = |i: usize| {
            if let Some(c) = pick(i) {
                rows.push(i);
                class.push(c);
            }
        };
        match pool {
            Some(pool_rows) => pool_rows.iter().for_each(|&i| push(i)),
            None => (0..self.ds.n_rows()).for_each(push),
        }
        fit_participation_rows(dm, &rows, &class, labels, layout, spec, init)
    }

    pub fn design_row(&self, kind: SpecKind, row: usize) -> &[f64] {
        self.group(kind).2.row(row)
    }
}

/// Fitted nuisance bundle for the design-stage estimators.
#[derive(Debug, Clone)]
pub struct DesignNuisances {
    pub mu_y1_h1: ConditionalMeanModel,
    pub mu_y0_h1: ConditionalMeanModel,
    pub mu_d1_h1: ConditionalMeanModel,
    pub mu_d0_h1: ConditionalMeanModel,
    pub mu_d1_h2: ConditionalMeanModel,
    pub mu_d0_h2: ConditionalMeanModel,
    /// Classes `[t, h1, h2]`; present only when the caller asked for it
    /// (the influence-function estimator needs it, the plug-in one does
    /// not).
    pub participation: Option<ParticipationModel>,
}

/// Fitted nuisance bundle for the post-hoc estimators.
#[derive(Debug, Clone)]
pub struct PosthocNuisances {
    pub mu_y1_h1: ConditionalMeanModel,
    pub mu_y0_h1: ConditionalMeanModel,
    pub mu_d1_h1: ConditionalMeanModel,
    pub mu_d0_h1: ConditionalMeanModel,
    /// Treatment uptake under assignment in the target trial, μ_{D,1}(X; t).
    pub mu_d1_t: ConditionalMeanModel,
    /// Classes `[t, h1]`.
    pub participation: Option<ParticipationModel>,
}

impl DesignNuisances {
    /// Any component fit that tripped the separation guard.
    pub fn separation_detected(&self) -> bool {
        self.mu_y1_h1.convergence.separation_detected
            || self.mu_y0_h1.convergence.separation_detected
            || self.mu_d1_h1.convergence.separation_detected
            || self.mu_d0_h1.convergence.separation_detected
            || self.mu_d1_h2.convergence.separation_detected
            || self.mu_d0_h2.convergence.separation_detected
            || self
                .participation
                .as_ref()
                .is_some_and(|p| p.convergence.separation_detected)
    }
}

impl PosthocNuisances {
    /// Any component fit that tripped the separation guard.
    pub fn separation_detected(&self) -> bool {
        self.mu_y1_h1.convergence.separation_detected
            || self.mu_y0_h1.convergence.separation_detected
            || self.mu_d1_h1.convergence.separation_detected
            || self.mu_d0_h1.convergence.separation_detected
            || self.mu_d1_t.convergence.separation_detected
            || self
                .participation
                .as_ref()
                .is_some_and(|p| p.convergence.separation_detected)
    }
}

impl<'a> Prepared<'a> {
    /// Fit everything the design-stage estimators need on `pool` (full data
    /// when `None`), warm-starting from `warm` when given.
    pub fn fit_design(
        &self,
        pool: Option<&[usize]>,
        warm: Option<&DesignNuisances>,
        with_participation: bool,
    ) -> Result<DesignNuisances> {
        let w = |pick: fn(&DesignNuisances) -> &ConditionalMeanModel| {
            warm.map(|f| pick(f).coefficients.as_slice())
        };
        let mu_y1_h1 = self.fit_cell_model(
            SpecKind::Outcome,
            &self.h1_label,
            1,
            Endpoint::Y,
            pool,
            w(|f| &f.mu_y1_h1),
        )?;
        let mu_y0_h1 = self.fit_cell_model(
            SpecKind::Outcome,
            &self.h1_label,
            0,
            Endpoint::Y,
            pool,
            w(|f| &f.mu_y0_h1),
        )?;
        let mu_d1_h1 = self.fit_cell_model(
            SpecKind::Treatment,
            &self.h1_label,
            1,
            Endpoint::D,
            pool,
            w(|f| &f.mu_d1_h1),
        )?;
        let mu_d0_h1 = self.fit_cell_model(
            SpecKind::Treatment,
            &self.h1_label,
            0,
            Endpoint::D,
            pool,
            w(|f| &f.mu_d0_h1),
        )?;
        let (mu_d1_h2, mu_d0_h2) = if self.collapsed {
            // One historical trial plays both roles; reuse the fitted models
            // so the algebraic collapse is exact.
            (mu_d1_h1.clone(), mu_d0_h1.clone())
        } else {
            (
                self.fit_cell_model(
                    SpecKind::Treatment,
                    &self.h2_label,
                    1,
                    Endpoint::D,
                    pool,
                    w(|f| &f.mu_d1_h2),
                )?,
                self.fit_cell_model(
                    SpecKind::Treatment,
                    &self.h2_label,
                    0,
                    Endpoint::D,
                    pool,
                    w(|f| &f.mu_d0_h2),
                )?,
            )
        };
        let participation = if with_participation {
            let labels = self.design_participation_labels();
            let init = warm
                .and_then(|f| f.participation.as_ref())
                .map(|m| m.coefficients.as_slice());
            Some(self.fit_participation_model(&labels, pool, init)?)
        } else {
            None
        };
        Ok(DesignNuisances {
            mu_y1_h1,
            mu_y0_h1,
            mu_d1_h1,
            mu_d0_h1,
            mu_d1_h2,
            mu_d0_h2,
            participation,
        })
    }

    /// Class order for design-stage participation: target first, then the
    /// historical trials.
    pub fn design_participation_labels(&self) -> Vec<String> {
        if self.collapsed {
            vec![self.t_label.clone(), self.h1_label.clone()]
        } else {
            vec![
                self.t_label.clone(),
                self.h1_label.clone(),
                self.h2_label.clone(),
            ]
        }
    }

    /// Fit everything the post-hoc estimators need.
    pub fn fit_posthoc(
        &self,
        pool: Option<&[usize]>,
        warm: Option<&PosthocNuisances>,
        with_participation: bool,
    ) -> Result<PosthocNuisances> {
        let w = |pick: fn(&PosthocNuisances) -> &ConditionalMeanModel| {
            warm.map(|f| pick(f).coefficients.as_slice())
        };
        let mu_y1_h1 = self.fit_cell_model(
            SpecKind::Outcome,
            &self.h1_label,
            1,
            Endpoint::Y,
            pool,
            w(|f| &f.mu_y1_h1),
        )?;
        let mu_y0_h1 = self.fit_cell_model(
            SpecKind::Outcome,
            &self.h1_label,
            0,
            Endpoint::Y,
            pool,
            w(|f| &f.mu_y0_h1),
        )?;
        let mu_d1_h1 = self.fit_cell_model(
            SpecKind::Treatment,
            &self.h1_label,
            1,
            Endpoint::D,
            pool,
            w(|f| &f.mu_d1_h1),
        )?;
        let mu_d0_h1 = self.fit_cell_model(
            SpecKind::Treatment,
            &self.h1_label,
            0,
            Endpoint::D,
            pool,
            w(|f| &f.mu_d0_h1),
        )?;
        let mu_d1_t = self.fit_cell_model(
            SpecKind::Treatment,
            &self.t_label,
            1,
            Endpoint::D,
            pool,
            w(|f| &f.mu_d1_t),
        )?;
        let participation = if with_participation {
            let labels = vec![self.t_label.clone(), self.h1_label.clone()];
            let init = warm
                .and_then(|f| f.participation.as_ref())
                .map(|m| m.coefficients.as_slice());
            Some(self.fit_participation_model(&labels, pool, init)?)
        } else {
            None
        };
        Ok(PosthocNuisances {
            mu_y1_h1,
            mu_y0_h1,
            mu_d1_h1,
            mu_d0_h1,
            mu_d1_t,
            participation,
        })
    }
}

/// Which estimator family a column set serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnsFamily {
    /// Scale factor is δ̂^D(X; h₂). `collapsed` marks the one-historical
    /// case where that factor aliases the Wald denominator and cancels.
    Design { collapsed: bool },
    /// Scale factor is δ̂^{D*}(X; t) = μ̂_{D,1}(X; t) − μ*_{D,0}(X; t).
    Posthoc,
}

/// Per-row nuisance values over the pooled dataset. Estimators read these
/// and nothing else, so tests can inject exact (oracle) functions and
/// cross-fitting can splice fold-wise predictions row by row.
#[derive(Debug, Clone)]
pub struct NuisanceColumns {
    pub family: ColumnsFamily,
    /// Row passes the Wald-denominator floor |δ̂^D(X; h₁)| ≥ ε_d.
    pub include: Vec<bool>,
    /// Raw conditional Wald ratio δ̂^Y/δ̂^D (X; h₁); NaN where excluded.
    pub wald: Vec<f64>,
    pub delta_y_h1: Vec<f64>,
    pub delta_d_h1: Vec<f64>,
    pub mu_y0_h1: Vec<f64>,
    pub mu_d0_h1: Vec<f64>,
    /// δ̂^D(X; h₂) for design columns, δ̂^{D*}(X; t) for post-hoc columns.
    pub cc: Vec<f64>,
    /// μ̂_{D,0}(X; h₂); empty unless design columns with participation.
    pub mu_d0_h2: Vec<f64>,
    /// μ̂_{D,1}(X; t); empty unless post-hoc columns.
    pub mu_d1_t: Vec<f64>,
    /// Participation probabilities; empty when no participation model was
    /// requested. `p_h2` aliases `p_h1` under collapse.
    pub p_t: Vec<f64>,
    pub p_h1: Vec<f64>,
    pub p_h2: Vec<f64>,
    /// Density of the observed arm f̂(Z_i | X_i, S_i); 1.0 where Z is
    /// unrecorded.
    pub f_z: Vec<f64>,
    /// Probability floor / range-clamp events during prediction.
    pub prediction_floor_count: usize,
    /// Any contributing fit (full-sample or per-fold) tripped the
    /// separation guard.
    pub separation_detected: bool,
    /// Rows whose participation probabilities sat at the floor.
    participation_floored: Vec<bool>,
}

impl NuisanceColumns {
    /// Empty column set for `n` rows; every vector the caller fills must be
    /// sized explicitly. Used by oracle-injection tests.
    pub fn empty(family: ColumnsFamily, n: usize) -> Self {
        NuisanceColumns {
            family,
            include: vec![true; n],
            wald: vec![f64::NAN; n],
            delta_y_h1: vec![f64::NAN; n],
            delta_d_h1: vec![f64::NAN; n],
            mu_y0_h1: vec![f64::NAN; n],
            mu_d0_h1: vec![f64::NAN; n],
            cc: vec![f64::NAN; n],
            mu_d0_h2: Vec::new(),
            mu_d1_t: Vec::new(),
            p_t: Vec::new(),
            p_h1: Vec::new(),
            p_h2: Vec::new(),
            f_z: Vec::new(),
            prediction_floor_count: 0,
            separation_detected: false,
            participation_floored: Vec::new(),
        }
    }

    /// Trials where more than half the rows had participation probabilities
    /// at the floor — reported, not fatal.
    pub fn non_overlap_trials(&self, ds: &TrialDataset) -> Vec<String> {
        if self.participation_floored.is_empty() {
            return Vec::new();
        }
        let mut floored: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for i in 0..ds.n_rows() {
            let e = floored.entry(ds.trial_label(i)).or_insert((0, 0));
            e.1 += 1;
            if self.participation_floored[i] {
                e.0 += 1;
            }
        }
        floored
            .into_iter()
            .filter(|(_, (f, n))| *f * 2 > *n)
            .map(|(label, _)| label.to_string())
            .collect()
    }
}

impl<'a> Prepared<'a> {
    /// Evaluate design-stage columns for every row (or the subset `fill`).
    pub fn design_columns(
        &self,
        fits: &DesignNuisances,
        assignment: Option<&AssignmentModel>,
    ) -> Result<NuisanceColumns> {
        let mut cols = self.empty_design_columns(fits);
        let rows: Vec<usize> = (0..self.ds.n_rows()).collect();
        self.fill_design_columns(&mut cols, fits, assignment, &rows)?;
        Ok(cols)
    }

    fn empty_design_columns(&self, fits: &DesignNuisances) -> NuisanceColumns {
        let n = self.ds.n_rows();
        let mut cols = NuisanceColumns::empty(
            ColumnsFamily::Design {
                collapsed: self.collapsed,
            },
            n,
        );
        if fits.participation.is_some() {
            cols.mu_d0_h2 = vec![f64::NAN; n];
            cols.p_t = vec![f64::NAN; n];
            cols.p_h1 = vec![f64::NAN; n];
            cols.p_h2 = vec![f64::NAN; n];
            cols.f_z = vec![1.0; n];
            cols.participation_floored = vec![false; n];
        }
        cols
    }

    fn fill_design_columns(
        &self,
        cols: &mut NuisanceColumns,
        fits: &DesignNuisances,
        assignment: Option<&AssignmentModel>,
        rows: &[usize],
    ) -> Result<()> {
        let with_weights = fits.participation.is_some();
        cols.separation_detected |= fits.separation_detected();
        for &i in rows {
            let orow = self.outcome_dm.row(i);
            let trow = self.treatment_dm.row(i);
            let (y0, fl0) = fits.mu_y0_h1.predict_encoded(orow);
            let (y1, fl1) = fits.mu_y1_h1.predict_encoded(orow);
            let (d0, fl2) = fits.mu_d0_h1.predict_encoded(trow);
            let (d1, fl3) = fits.mu_d1_h1.predict_encoded(trow);
            let (h2_1, fl4) = fits.mu_d1_h2.predict_encoded(trow);
            let (h2_0, fl5) = fits.mu_d0_h2.predict_encoded(trow);
            cols.prediction_floor_count +=
                usize::from(fl0) + usize::from(fl1) + usize::from(fl2) + usize::from(fl3);
            if !self.collapsed {
                cols.prediction_floor_count += usize::from(fl4) + usize::from(fl5);
            }
            let delta_y = y1 - y0;
            let delta_d = d1 - d0;
            cols.mu_y0_h1[i] = y0;
            cols.mu_d0_h1[i] = d0;
            cols.delta_y_h1[i] = delta_y;
            cols.delta_d_h1[i] = delta_d;
            cols.cc[i] = h2_1 - h2_0;
            if delta_d.abs() < EPS_DENOMINATOR {
                cols.include[i] = false;
                cols.wald[i] = f64::NAN;
            } else {
                cols.include[i] = true;
                cols.wald[i] = delta_y / delta_d;
            }
            if with_weights {
                let part = fits.participation.as_ref().unwrap();
                let prow = self.participation_dm.row(i);
                let (p, floored) = part.predict_encoded_flagged(prow);
                cols.p_t[i] = p[0];
                cols.p_h1[i] = p[1];
                cols.p_h2[i] = if self.collapsed { p[1] } else { p[2] };
                cols.participation_floored[i] = floored;
                cols.mu_d0_h2[i] = h2_0;
                if let (Some(am), Some(z)) = (assignment, self.ds.z(i)) {
                    cols.f_z[i] = self.assignment_density(am, i, z)?;
                }
            }
        }
        Ok(())
    }

    /// Evaluate post-hoc columns for every row (or the subset `fill`).
    pub fn posthoc_columns(
        &self,
        fits: &PosthocNuisances,
        sens: &super::SensitivityParameter,
        assignment: Option<&AssignmentModel>,
    ) -> Result<NuisanceColumns> {
        let mut cols = self.empty_posthoc_columns(fits);
        let rows: Vec<usize> = (0..self.ds.n_rows()).collect();
        self.fill_posthoc_columns(&mut cols, fits, sens, assignment, &rows)?;
        Ok(cols)
    }

    fn empty_posthoc_columns(&self, fits: &PosthocNuisances) -> NuisanceColumns {
        let n = self.ds.n_rows();
        let mut cols = NuisanceColumns::empty(ColumnsFamily::Posthoc, n);
        cols.mu_d1_t = vec![f64::NAN; n];
        if fits.participation.is_some() {
            cols.p_t = vec![f64::NAN; n];
            cols.p_h1 = vec![f64::NAN; n];
            cols.f_z = vec![1.0; n];
            cols.participation_floored = vec![false; n];
        }
        cols
    }

    fn fill_posthoc_columns(
        &self,
        cols: &mut NuisanceColumns,
        fits: &PosthocNuisances,
        sens: &super::SensitivityParameter,
        assignment: Option<&AssignmentModel>,
        rows: &[usize],
    ) -> Result<()> {
        let with_weights = fits.participation.is_some();
        cols.separation_detected |= fits.separation_detected();
        for &i in rows {
            let orow = self.outcome_dm.row(i);
            let trow = self.treatment_dm.row(i);
            let (y0, fl0) = fits.mu_y0_h1.predict_encoded(orow);
            let (y1, fl1) = fits.mu_y1_h1.predict_encoded(orow);
            let (d0, fl2) = fits.mu_d0_h1.predict_encoded(trow);
            let (d1, fl3) = fits.mu_d1_h1.predict_encoded(trow);
            let (d1t, fl4) = fits.mu_d1_t.predict_encoded(trow);
            cols.prediction_floor_count += usize::from(fl0)
                + usize::from(fl1)
                + usize::from(fl2)
                + usize::from(fl3)
                + usize::from(fl4);
            let delta_y = y1 - y0;
            let delta_d = d1 - d0;
            cols.mu_y0_h1[i] = y0;
            cols.mu_d0_h1[i] = d0;
            cols.delta_y_h1[i] = delta_y;
            cols.delta_d_h1[i] = delta_d;
            cols.mu_d1_t[i] = d1t;
            let mu_star = sens.evaluate(&self.ds.covariate_row(i))?;
            cols.cc[i] = d1t - mu_star;
            if delta_d.abs() < EPS_DENOMINATOR {
                cols.include[i] = false;
                cols.wald[i] = f64::NAN;
            } else {
                cols.include[i] = true;
                cols.wald[i] = delta_y / delta_d;
            }
            if with_weights {
                let part = fits.participation.as_ref().unwrap();
                let prow = self.participation_dm.row(i);
                let (p, floored) = part.predict_encoded_flagged(prow);
                cols.p_t[i] = p[0];
                cols.p_h1[i] = p[1];
                cols.participation_floored[i] = floored;
                if let (Some(am), Some(z)) = (assignment, self.ds.z(i)) {
                    cols.f_z[i] = self.assignment_density(am, i, z)?;
                }
            }
        }
        Ok(())
    }

    fn assignment_density(&self, am: &AssignmentModel, row: usize, z: u8) -> Result<f64> {
        match am {
            AssignmentModel::Known { .. } => {
                // Encoded row irrelevant for known constants.
                am.density(self.ds.trial_label(row), &[], z)
            }
            AssignmentModel::Fitted { models } => {
                let label = self.ds.trial_label(row);
                let fit = models
                    .get(label)
                    .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
                let x = self.ds.covariate_row(row);
                let encoded = fit.layout.encode(&x)?;
                am.density(label, &encoded, z)
            }
        }
    }
}

/// Cross-fitted design columns: each row's predictions come from the fold
/// complement. `plan.k == 1` takes the plain full-sample path, making the
/// no-splitting case bit-identical to a direct fit.
pub fn design_columns_crossfit(
    prepared: &Prepared<'_>,
    plan: &CrossfitPlan,
    assignment: Option<&AssignmentModel>,
    with_participation: bool,
) -> Result<NuisanceColumns> {
    let (fold_of, fits) = crate::inference::cross_fit(plan, prepared.ds, |train| {
        prepared.fit_design(Some(train), None, with_participation)
    })?;
    let mut cols = prepared.empty_design_columns(&fits[0]);
    for (fold, f) in fits.iter().enumerate() {
        let eval: Vec<usize> = (0..prepared.ds.n_rows())
            .filter(|&i| fold_of[i] == fold)
            .collect();
        prepared.fill_design_columns(&mut cols, f, assignment, &eval)?;
    }
    Ok(cols)
}

/// Cross-fitted post-hoc columns; see [`design_columns_crossfit`].
pub fn posthoc_columns_crossfit(
    prepared: &Prepared<'_>,
    plan: &CrossfitPlan,
    sens: &super::SensitivityParameter,
    assignment: Option<&AssignmentModel>,
    with_participation: bool,
) -> Result<NuisanceColumns> {
    let (fold_of, fits) = crate::inference::cross_fit(plan, prepared.ds, |train| {
        prepared.fit_posthoc(Some(train), None, with_participation)
    })?;
    let mut cols = prepared.empty_posthoc_columns(&fits[0]);
    for (fold, f) in fits.iter().enumerate() {
        let eval: Vec<usize> = (0..prepared.ds.n_rows())
            .filter(|&i| fold_of[i] == fold)
            .collect();
        prepared.fill_posthoc_columns(&mut cols, f, sens, assignment, &eval)?;
    }
    Ok(cols)
}
