//! Estimator arithmetic over nuisance columns.
//!
//! Every estimator here is a deterministic function of a dataset, a set of
//! per-row nuisance columns, and a row multiset. The regression family
//! averages plug-in products over target rows; the influence-function family
//! adds weighted residual corrections from the pooled sample and yields
//! per-row influence values for variance estimation.

use crate::data::{Role, TrialDataset};
use crate::error::{Error, Result};

use super::engine::{ColumnsFamily, NuisanceColumns};
use super::clamp_estimate;

/// Outcome of one point-estimator evaluation.
#[derive(Debug, Clone)]
pub struct PointEvaluation {
    /// Estimate before the final [−1, 1] threshold.
    pub point_raw: f64,
    /// Estimate after the threshold.
    pub point: f64,
    /// Target rows seen in the multiset.
    pub n_target: usize,
    /// Target rows surviving the denominator floor.
    pub n_target_used: usize,
    /// Hard-threshold events: per target row for the regression family, on
    /// the final estimate for the influence-function family.
    pub clamp_count: usize,
    /// Rows dropped by the |δ̂^D(X; h₁)| floor.
    pub denominator_floor_count: usize,
    /// Rows entering the influence-function universe; 0 for the regression
    /// family.
    pub n_universe: usize,
    /// Influence values per universe row, in multiset order. Empty unless
    /// requested.
    pub eif_values: Vec<f64>,
}

/// Mean of `values` over the target rows of `rows`. Shared by the collapsed
/// regression estimator and the constancy estimators so that their exact
/// algebraic identity holds bit for bit: both reduce to this very loop.
pub(crate) fn mean_over_target(
    values: &[f64],
    ds: &TrialDataset,
    rows: &[usize],
) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &i in rows {
        if ds.role_of_row(i) != Role::Target {
            continue;
        }
        sum += values[i];
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyRole("target".into()));
    }
    Ok((sum / n as f64, n))
}

/// Regression (plug-in) estimator: average over included target rows of the
/// thresholded Wald ratio times the cross-trial scale factor.
///
/// Under collapse the scale factor is the Wald denominator itself, so the
/// product reduces analytically to δ̂^Y(X; h₁); that branch averages the
/// outcome contrast over all target rows with no floor and no threshold.
pub(crate) fn reg_point(
    ds: &TrialDataset,
    cols: &NuisanceColumns,
    rows: &[usize],
) -> Result<PointEvaluation> {
    if let ColumnsFamily::Design { collapsed: true } = cols.family {
        let (mean, n_target) = mean_over_target(&cols.delta_y_h1, ds, rows)?;
        let point = clamp_estimate(mean)?;
        return Ok(PointEvaluation {
            point_raw: mean,
            point,
            n_target,
            n_target_used: n_target,
            clamp_count: usize::from(point != mean),
            denominator_floor_count: 0,
            n_universe: 0,
            eif_values: Vec::new(),
        });
    }

    let mut sum = 0.0;
    let mut n_target = 0usize;
    let mut n_used = 0usize;
    let mut clamp_count = 0usize;
    let mut floor_count = 0usize;
    for &i in rows {
        if ds.role_of_row(i) != Role::Target {
            continue;
        }
        n_target += 1;
        if !cols.include[i] {
            floor_count += 1;
            continue;
        }
        let mut wald = cols.wald[i];
        if wald > 1.0 {
            wald = 1.0;
            clamp_count += 1;
        } else if wald < -1.0 {
            wald = -1.0;
            clamp_count += 1;
        }
        sum += wald * cols.cc[i];
        n_used += 1;
    }
    if n_used == 0 {
        return Err(Error::AllStrataDegenerate);
    }
    let raw = sum / n_used as f64;
    let point = clamp_estimate(raw)?;
    Ok(PointEvaluation {
        point_raw: raw,
        point,
        n_target,
        n_target_used: n_used,
        clamp_count,
        denominator_floor_count: floor_count,
        n_universe: 0,
        eif_values: Vec::new(),
    })
}

/// Influence-function estimator over the pooled multiset.
///
/// Design columns: historical-1 rows contribute the reweighted outcome
/// residual, historical-2 rows the reweighted treatment residual, target rows
/// the plug-in product. Post-hoc columns: the historical-2 correction is
/// replaced by a target-side treatment residual on the Z = 1 arm and
/// historical-2 rows drop out of the universe entirely.
///
/// The estimate divides the grand sum by the number of included target rows;
/// the per-row influence values are scaled so their mean is exactly zero at
/// the plug-in estimate.
pub(crate) fn eif_point(
    ds: &TrialDataset,
    cols: &NuisanceColumns,
    rows: &[usize],
    want_eif: bool,
) -> Result<PointEvaluation> {
    let posthoc = match cols.family {
        ColumnsFamily::Posthoc => true,
        ColumnsFamily::Design { collapsed: false } => false,
        ColumnsFamily::Design { collapsed: true } => {
            return Err(Error::MissingRole("historical2".into()));
        }
    };
    let n = ds.n_rows();
    if cols.p_t.len() != n || cols.p_h1.len() != n || cols.f_z.len() != n {
        return Err(Error::InvalidConfig(
            "influence-function evaluation needs participation and assignment columns".into(),
        ));
    }
    if posthoc {
        if cols.mu_d1_t.len() != n {
            return Err(Error::InvalidConfig(
                "post-hoc influence-function evaluation needs the target treatment model column"
                    .into(),
            ));
        }
    } else if cols.mu_d0_h2.len() != n || cols.p_h2.len() != n {
        return Err(Error::InvalidConfig(
            "design influence-function evaluation needs historical-2 columns".into(),
        ));
    }

    let mut contrib: Vec<(f64, f64, bool)> = if want_eif {
        Vec::with_capacity(rows.len())
    } else {
        Vec::new()
    };
    let mut sum_g12 = 0.0;
    let mut sum_g3 = 0.0;
    let mut n_target = 0usize;
    let mut n_target_used = 0usize;
    let mut n_universe = 0usize;
    let mut floor_count = 0usize;
    for &i in rows {
        let role = ds.role_of_row(i);
        if posthoc && role == Role::Historical2 {
            continue;
        }
        if role == Role::Target {
            n_target += 1;
        }
        if !cols.include[i] {
            floor_count += 1;
            continue;
        }
        n_universe += 1;
        let (g12, g3, is_target) = match role {
            Role::Historical1 => {
                // Dataset construction guarantees z, d, y on historical-1 rows.
                let z = f64::from(ds.z(i).unwrap());
                let d = f64::from(ds.d(i).unwrap());
                let y = f64::from(ds.y(i).unwrap());
                let sign = 2.0 * z - 1.0;
                let resid = y - cols.mu_y0_h1[i] - (d - cols.mu_d0_h1[i]) * cols.wald[i];
                let ratio = cols.cc[i] / cols.delta_d_h1[i];
                let weight = sign / cols.f_z[i] * (cols.p_t[i] / cols.p_h1[i]);
                (weight * ratio * resid, 0.0, false)
            }
            Role::Historical2 => {
                // Dataset construction guarantees z, d on distinct
                // historical-2 rows.
                let z = f64::from(ds.z(i).unwrap());
                let d = f64::from(ds.d(i).unwrap());
                let sign = 2.0 * z - 1.0;
                let resid = d - cols.mu_d0_h2[i] - cols.cc[i] * z;
                let weight = sign / cols.f_z[i] * (cols.p_t[i] / cols.p_h2[i]);
                (weight * cols.wald[i] * resid, 0.0, false)
            }
            Role::Target => {
                n_target_used += 1;
                let g3 = cols.wald[i] * cols.cc[i];
                let g2 = if posthoc && ds.z(i) == Some(1) {
                    let Some(d) = ds.d(i) else {
                        return Err(Error::MissingRequiredColumn {
                            column: "d".into(),
                            trial: ds.trial_label(i).to_string(),
                            role: "target".into(),
                        });
                    };
                    cols.wald[i] * (f64::from(d) - cols.mu_d1_t[i]) / cols.f_z[i]
                } else {
                    0.0
                };
                (g2, g3, true)
            }
        };
        sum_g12 += g12;
        sum_g3 += g3;
        if want_eif {
            contrib.push((g12, g3, is_target));
        }
    }
    if n_target_used == 0 {
        return Err(Error::AllStrataDegenerate);
    }
    let raw = (sum_g12 + sum_g3) / n_target_used as f64;
    let point = clamp_estimate(raw)?;
    let eif_values = if want_eif {
        let scale = n_universe as f64 / n_target_used as f64;
        contrib
            .into_iter()
            .map(|(g12, g3, is_target)| {
                scale * (g12 + if is_target { g3 - raw } else { 0.0 })
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(PointEvaluation {
        point_raw: raw,
        point,
        n_target,
        n_target_used,
        clamp_count: usize::from(point != raw),
        denominator_floor_count: floor_count,
        n_universe,
        eif_values,
    })
}
