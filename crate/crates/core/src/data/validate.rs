//! Report-only dataset diagnostics: cell counts, covariate summaries, and a
//! covariate-overlap check based on fitted trial-participation
//! probabilities.

use serde::{Deserialize, Serialize};

use crate::nuisance::{fit_participation, GlmSpec, EPS_PROBABILITY};

use super::{Covariate, TrialDataset};

/// Row count and event counts for one (trial, arm) cell. Rows without a
/// recorded `z` are collected under `z: None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCount {
    pub trial: String,
    pub z: Option<u8>,
    pub n: usize,
    /// Rows with `d` recorded, and among them the number with `d = 1`.
    pub d_observed: usize,
    pub d_events: usize,
    /// Rows with `y` recorded, and among them the number with `y = 1`.
    pub y_observed: usize,
    pub y_events: usize,
}

/// Per-trial distribution summary of one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovariateSummary {
    Continuous {
        trial: String,
        covariate: String,
        mean: f64,
        sd: f64,
        min: f64,
        max: f64,
    },
    Categorical {
        trial: String,
        covariate: String,
        levels: Vec<LevelCount>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: String,
    pub n: usize,
}

/// Overlap diagnostic from a fitted participation model: the distribution
/// of p(S = target | X) over all rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapDiagnostic {
    pub mean_target_probability: f64,
    /// Counts of p(target | X) in ten equal-width bins over [0, 1].
    pub histogram: Vec<usize>,
    /// Share of rows whose target probability sits at the floor ε_p.
    pub at_floor_share: f64,
}

/// Everything `validate_dataset` reports. Problems surface as warnings, not
/// errors; a loadable dataset always yields a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_rows: usize,
    pub cells: Vec<CellCount>,
    pub covariates: Vec<CovariateSummary>,
    pub overlap: Option<OverlapDiagnostic>,
    pub warnings: Vec<String>,
}

/// Summarize a dataset: per-(trial, arm) counts, per-trial covariate
/// distributions, and the participation-overlap diagnostic.
pub fn validate_dataset(ds: &TrialDataset) -> ValidationReport {
    let mut warnings = Vec::new();
    let cells = cell_counts(ds);

    // Empty-arm warnings: a trial that records z at all should populate
    // both arms.
    for label in ds.trial_labels() {
        let mut arm = [0usize; 2];
        let mut any_z = false;
        for i in 0..ds.n_rows() {
            if ds.trial_label(i) == label {
                if let Some(z) = ds.z(i) {
                    any_z = true;
                    arm[z as usize] += 1;
                }
            }
        }
        if any_z {
            for z in 0..2 {
                if arm[z] == 0 {
                    warnings.push(format!("trial '{label}' has no rows in arm z={z}"));
                }
            }
        }
    }

    let covariates = covariate_summaries(ds);
    let overlap = match overlap_diagnostic(ds) {
        Ok(d) => Some(d),
        Err(e) => {
            warnings.push(format!("overlap diagnostic unavailable: {e}"));
            None
        }
    };

    ValidationReport {
        n_rows: ds.n_rows(),
        cells,
        covariates,
        overlap,
        warnings,
    }
}

fn cell_counts(ds: &TrialDataset) -> Vec<CellCount> {
    let mut cells: Vec<CellCount> = Vec::new();
    for label in ds.trial_labels() {
        for z in [Some(0u8), Some(1u8), None] {
            let rows: Vec<usize> = (0..ds.n_rows())
                .filter(|&i| ds.trial_label(i) == label && ds.z(i) == z)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let d_observed = rows.iter().filter(|&&i| ds.d(i).is_some()).count();
            let d_events = rows.iter().filter(|&&i| ds.d(i) == Some(1)).count();
            let y_observed = rows.iter().filter(|&&i| ds.y(i).is_some()).count();
            let y_events = rows.iter().filter(|&&i| ds.y(i) == Some(1)).count();
            cells.push(CellCount {
                trial: label.clone(),
                z,
                n: rows.len(),
                d_observed,
                d_events,
                y_observed,
                y_events,
            });
        }
    }
    cells
}

fn covariate_summaries(ds: &TrialDataset) -> Vec<CovariateSummary> {
    let mut out = Vec::new();
    for label in ds.trial_labels() {
        let rows: Vec<usize> = (0..ds.n_rows())
            .filter(|&i| ds.trial_label(i) == label)
            .collect();
        for (name, col) in ds.covariate_names().iter().zip(ds.covariates()) {
            match col {
                Covariate::Continuous(values) => {
                    let n = rows.len() as f64;
                    let mean = rows.iter().map(|&i| values[i]).sum::<f64>() / n;
                    let var = rows.iter().map(|&i| (values[i] - mean).powi(2)).sum::<f64>()
                        / (n - 1.0).max(1.0);
                    let min = rows.iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
                    let max = rows
                        .iter()
                        .map(|&i| values[i])
                        .fold(f64::NEG_INFINITY, f64::max);
                    out.push(CovariateSummary::Continuous {
                        trial: label.clone(),
                        covariate: name.clone(),
                        mean,
                        sd: var.sqrt(),
                        min,
                        max,
                    });
                }
                Covariate::Categorical { levels, codes } => {
                    let mut counts = vec![0usize; levels.len()];
                    for &i in &rows {
                        counts[codes[i] as usize] += 1;
                    }
                    out.push(CovariateSummary::Categorical {
                        trial: label.clone(),
                        covariate: name.clone(),
                        levels: levels
                            .iter()
                            .zip(counts)
                            .map(|(level, n)| LevelCount {
                                level: level.clone(),
                                n,
                            })
                            .collect(),
                    });
                }
            }
        }
    }
    out
}

fn overlap_diagnostic(ds: &TrialDataset) -> crate::error::Result<OverlapDiagnostic> {
    let labels: Vec<String> = ds.trial_labels().to_vec();
    let model = fit_participation(ds, &labels, &GlmSpec::logit_linear())?;
    let target_class = model.class_of(&ds.roles().target_label)?;
    let dm = model.layout.matrix(ds);
    let mut histogram = vec![0usize; 10];
    let mut total = 0.0;
    let mut at_floor = 0usize;
    for i in 0..ds.n_rows() {
        let p = model.predict_encoded(dm.row(i))[target_class];
        total += p;
        let bin = ((p * 10.0).floor() as usize).min(9);
        histogram[bin] += 1;
        if p <= EPS_PROBABILITY {
            at_floor += 1;
        }
    }
    let n = ds.n_rows() as f64;
    Ok(OverlapDiagnostic {
        mean_target_probability: total / n,
        histogram,
        at_floor_share: at_floor as f64 / n,
    })
}
