//! Treatment-assignment probabilities f(Z = 1 | X, S = s). Randomized
//! trials know these by design, so the default is a known per-trial
//! constant; a fitted per-trial logit is available as an override.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};

use super::design::DesignLayout;
use super::glm::{expit, fit_cell, FitMeta};
use super::{GlmSpec, EPS_PROBABILITY};

/// Per-trial fitted logit of Z on X.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentFit {
    pub layout: DesignLayout,
    pub coefficients: Vec<f64>,
    pub convergence: FitMeta,
}

/// Assignment-probability model, keyed by trial label.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AssignmentModel {
    /// Known randomization probabilities P(Z = 1 | S = s).
    Known { probabilities: BTreeMap<String, f64> },
    /// Estimated probabilities from a per-trial logistic regression.
    Fitted { models: BTreeMap<String, AssignmentFit> },
}

impl AssignmentModel {
    /// The design default: every trial randomizes with probability 1/2.
    pub fn known_half(ds: &TrialDataset) -> Self {
        let probabilities = ds
            .trial_labels()
            .iter()
            .map(|l| (l.clone(), 0.5))
            .collect();
        AssignmentModel::Known { probabilities }
    }

    /// Known constants supplied by the caller; each must lie strictly
    /// inside (0, 1).
    pub fn known(probabilities: BTreeMap<String, f64>) -> Result<Self> {
        for (trial, p) in &probabilities {
            if !p.is_finite() || *p <= 0.0 || *p >= 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "assignment probability for trial '{trial}' must lie in (0, 1), got {p}"
                )));
            }
        }
        Ok(AssignmentModel::Known { probabilities })
    }

    /// Fit a logit of Z on X separately within each trial that records Z.
    pub fn fit(ds: &TrialDataset, spec: &GlmSpec) -> Result<Self> {
        let layout = DesignLayout::from_dataset(ds, spec);
        let dm = layout.matrix(ds);
        let mut models = BTreeMap::new();
        for label in ds.trial_labels() {
            let rows: Vec<usize> = (0..ds.n_rows())
                .filter(|&i| ds.trial_label(i) == label && ds.z(i).is_some())
                .collect();
            if rows.is_empty() {
                continue;
            }
            let resp = |r: usize| f64::from(ds.z(r).unwrap());
            let (coefficients, convergence) = fit_cell(&dm, &rows, &resp, spec, None)?;
            models.insert(
                label.clone(),
                AssignmentFit {
                    layout: layout.clone(),
                    coefficients,
                    convergence,
                },
            );
        }
        if models.is_empty() {
            return Err(Error::InvalidConfig(
                "no trial records Z; cannot fit assignment model".to_string(),
            ));
        }
        Ok(AssignmentModel::Fitted { models })
    }

    /// P(Z = 1 | X = x, S = trial), floored to [ε_p, 1 − ε_p].
    pub fn prob_z1(&self, trial: &str, x: &[f64]) -> Result<f64> {
        match self {
            AssignmentModel::Known { probabilities } => probabilities
                .get(trial)
                .copied()
                .ok_or_else(|| Error::UnknownLabel(trial.to_string())),
            AssignmentModel::Fitted { models } => {
                let fit = models
                    .get(trial)
                    .ok_or_else(|| Error::UnknownLabel(trial.to_string()))?;
                let row = fit.layout.encode(x)?;
                Ok(Self::floor(expit(dot(&row, &fit.coefficients))))
            }
        }
    }

    /// P(Z = 1) from an already-encoded design row (layouts are shared
    /// across the engine, so encoding happens once per observation).
    pub fn prob_z1_encoded(&self, trial: &str, row: &[f64]) -> Result<f64> {
        match self {
            AssignmentModel::Known { probabilities } => probabilities
                .get(trial)
                .copied()
                .ok_or_else(|| Error::UnknownLabel(trial.to_string())),
            AssignmentModel::Fitted { models } => {
                let fit = models
                    .get(trial)
                    .ok_or_else(|| Error::UnknownLabel(trial.to_string()))?;
                Ok(Self::floor(expit(dot(row, &fit.coefficients))))
            }
        }
    }

    /// f(Z = z | X, S): the density of the observed arm.
    pub fn density(&self, trial: &str, row: &[f64], z: u8) -> Result<f64> {
        let p1 = self.prob_z1_encoded(trial, row)?;
        Ok(if z == 1 { p1 } else { 1.0 - p1 })
    }

    #[inline]
    fn floor(p: f64) -> f64 {
        p.clamp(EPS_PROBABILITY, 1.0 - EPS_PROBABILITY)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}
