//! GLM fitting: iteratively reweighted least squares for the logit link,
//! ordinary least squares for the identity link. Ridge-stabilized, with an
//! escalated-ridge fallback when separation is detected.

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::linalg::cholesky_solve_in_place;

use super::design::{DesignLayout, DesignMatrix};
use super::{Endpoint, GlmSpec, Link, EPS_PROBABILITY};

/// Coefficient magnitude beyond which a logit fit is declared separated
/// (expit(12) differs from 1 by ~6e-6; genuine fits stay far below).
const SEPARATION_BOUND: f64 = 12.0;

/// Ridge applied on the separation fallback refit.
pub const RIDGE_ESCALATED: f64 = 1e-2;

/// Convergence record attached to every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub iterations: usize,
    /// Sup-norm of the per-observation-scaled penalized score at the
    /// returned coefficients.
    pub score_norm: f64,
    pub separation_detected: bool,
    pub ridge_used: f64,
}

/// Fitted conditional mean of one endpoint in one (trial, arm) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalMeanModel {
    pub spec: GlmSpec,
    pub layout: DesignLayout,
    pub coefficients: Vec<f64>,
    pub trial: String,
    pub arm: u8,
    pub endpoint: Endpoint,
    pub convergence: FitMeta,
}

impl ConditionalMeanModel {
    /// Predict at a raw covariate vector (categorical covariates passed as
    /// level codes). Logit predictions are floored to
    /// `[EPS_PROBABILITY, 1 - EPS_PROBABILITY]`; identity-link predictions
    /// of the treatment-received endpoint are clamped to `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let encoded = self.layout.encode(x)?;
        Ok(self.predict_encoded(&encoded).0)
    }

    /// Prediction plus a flag for whether flooring/clamping fired.
    pub fn predict_with_flag(&self, x: &[f64]) -> Result<(f64, bool)> {
        let encoded = self.layout.encode(x)?;
        Ok(self.predict_encoded(&encoded))
    }

    /// Prediction from an already-encoded design row.
    #[inline]
    pub fn predict_encoded(&self, row: &[f64]) -> (f64, bool) {
        let eta = dot(row, &self.coefficients);
        match self.spec.link {
            Link::Logit => {
                let p = expit(eta);
                let floored = p.clamp(EPS_PROBABILITY, 1.0 - EPS_PROBABILITY);
                (floored, floored != p)
            }
            Link::Identity => {
                if self.endpoint == Endpoint::D {
                    let clamped = eta.clamp(0.0, 1.0);
                    (clamped, clamped != eta)
                } else {
                    (eta, false)
                }
            }
        }
    }
}

#[inline]
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
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

/// Core cell fit on a shared design matrix.
///
/// `rows` selects the observations (with multiplicity, enabling bootstrap
/// resamples), `resp` supplies the response per row index, `init` optionally
/// warm-starts the iteration. Convergence is declared when the sup-norm of
/// the penalized score divided by the cell size falls below
/// `spec.tolerance`.
pub fn fit_cell(
    dm: &DesignMatrix,
    rows: &[usize],
    resp: &dyn Fn(usize) -> f64,
    spec: &GlmSpec,
    init: Option<&[f64]>,
) -> Result<(Vec<f64>, FitMeta)> {
    match fit_cell_ridge(dm, rows, resp, spec, init, spec.ridge, true) {
        Ok((beta, mut meta)) => {
            if meta.separation_detected {
                // Refit from scratch with the escalated ridge to obtain a
                // stable, finite estimate.
                let (beta2, mut meta2) =
                    fit_cell_ridge(dm, rows, resp, spec, None, RIDGE_ESCALATED, false)?;
                meta2.separation_detected = true;
                return Ok((beta2, meta2));
            }
            meta.ridge_used = spec.ridge;
            Ok((beta, meta))
        }
        Err(Error::SingularSystem) => {
            let (beta, mut meta) =
                fit_cell_ridge(dm, rows, resp, spec, None, RIDGE_ESCALATED, false)?;
            meta.separation_detected = true;
            Ok((beta, meta))
        }
        Err(e) => Err(e),
    }
}

fn fit_cell_ridge(
    dm: &DesignMatrix,
    rows: &[usize],
    resp: &dyn Fn(usize) -> f64,
    spec: &GlmSpec,
    init: Option<&[f64]>,
    ridge: f64,
    halt_on_separation: bool,
) -> Result<(Vec<f64>, FitMeta)> {
    let k = dm.k;
    let n = rows.len() as f64;
    let mut beta = match init {
        Some(b) if b.len() == k => b.to_vec(),
        _ => vec![0.0; k],
    };
    let mut h = vec![0.0; k * k];
    let mut score = vec![0.0; k];

    match spec.link {
        Link::Identity => {
            // Single weighted least-squares solve.
            h.fill(0.0);
            score.fill(0.0);
            for &r in rows {
                let x = dm.row(r);
                let y = resp(r);
                accumulate(&mut h, &mut score, x, 1.0, y, k);
            }
            for j in 0..k {
                h[j * k + j] += ridge;
            }
            let mut rhs = score.clone();
            cholesky_solve_in_place(&mut h, &mut rhs, k)?;
            beta = rhs;
            // Residual score for the record.
            let mut sup = 0.0f64;
            score.fill(0.0);
            for &r in rows {
                let x = dm.row(r);
                let e = resp(r) - dot(x, &beta);
                for j in 0..k {
                    score[j] += x[j] * e;
                }
            }
            for j in 0..k {
                score[j] -= ridge * beta[j];
                sup = sup.max((score[j] / n).abs());
            }
            Ok((
                beta,
                FitMeta {
                    iterations: 1,
                    score_norm: sup,
                    separation_detected: false,
                    ridge_used: ridge,
                },
            ))
        }
        Link::Logit => {
            let mut last_score_norm = f64::INFINITY;
            for iter in 1..=spec.max_iterations {
                h.fill(0.0);
                score.fill(0.0);
                for &r in rows {
                    let x = dm.row(r);
                    let p = expit(dot(x, &beta));
                    let w = (p * (1.0 - p)).max(1e-10);
                    accumulate(&mut h, &mut score, x, w, resp(r) - p, k);
                }
                for j in 0..k {
                    score[j] -= ridge * beta[j];
                    h[j * k + j] += ridge;
                }
                let sup = score.iter().fold(0.0f64, |m, s| m.max((s / n).abs()));
                last_score_norm = sup;
                if sup <= spec.tolerance {
                    return Ok((
                        beta,
                        FitMeta {
                            iterations: iter - 1,
                            score_norm: sup,
                            separation_detected: false,
                            ridge_used: ridge,
                        },
                    ));
                }
                let mut step = score.clone();
                cholesky_solve_in_place(&mut h, &mut step, k)?;
                for j in 0..k {
                    beta[j] += step[j];
                }
                if !beta.iter().all(|b| b.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "logit coefficients diverged at iteration {iter}"
                    )));
                }
                if halt_on_separation && beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
                    return Ok((
                        beta,
                        FitMeta {
                            iterations: iter,
                            score_norm: sup,
                            separation_detected: true,
                            ridge_used: ridge,
                        },
                    ));
                }
            }
            Err(Error::NoConvergence {
                max_iterations: spec.max_iterations,
                score_norm: last_score_norm,
            })
        }
    }
}

/// Accumulate `w * x xᵀ` into the upper triangle of `h` (mirrored at the
/// end of the pass) and `e * x` into `score`.
#[inline]
fn accumulate(h: &mut [f64], score: &mut [f64], x: &[f64], w: f64, e: f64, k: usize) {
    for i in 0..k {
        let wxi = w * x[i];
        score[i] += e * x[i];
        let row = &mut h[i * k..i * k + k];
        for j in i..k {
            row[j] += wxi * x[j];
        }
    }
    // Mirror lazily: the Cholesky only reads the upper triangle via (i, j)
    // with j >= i when we store row-major and factor the lower triangle...
    // keep it symmetric explicitly to stay obvious.
    for i in 0..k {
        for j in (i + 1)..k {
            h[j * k + i] = h[i * k + j];
        }
    }
}

/// Fit one (trial, arm, endpoint) cell of a dataset.
pub fn fit_glm(
    ds: &TrialDataset,
    trial: &str,
    arm: u8,
    endpoint: Endpoint,
    spec: &GlmSpec,
) -> Result<ConditionalMeanModel> {
    let layout = DesignLayout::from_dataset(ds, spec);
    let dm = layout.matrix(ds);
    fit_glm_with(ds, &layout, &dm, trial, arm, endpoint, spec, None)
}

/// Cell fit reusing a prebuilt layout and matrix (the fast path for
/// bootstrap and cross-fitting).
#[allow(clippy::too_many_arguments)]
pub fn fit_glm_with(
    ds: &TrialDataset,
    layout: &DesignLayout,
    dm: &DesignMatrix,
    trial: &str,
    arm: u8,
    endpoint: Endpoint,
    spec: &GlmSpec,
    init: Option<&[f64]>,
) -> Result<ConditionalMeanModel> {
    let rows = cell_rows(ds, trial, arm)?;
    fit_glm_rows(ds, layout, dm, &rows, trial, arm, endpoint, spec, init)
}

/// Innermost public fit: caller supplies the exact row multiset.
#[allow(clippy::too_many_arguments)]
pub fn fit_glm_rows(
    ds: &TrialDataset,
    layout: &DesignLayout,
    dm: &DesignMatrix,
    rows: &[usize],
    trial: &str,
    arm: u8,
    endpoint: Endpoint,
    spec: &GlmSpec,
    init: Option<&[f64]>,
) -> Result<ConditionalMeanModel> {
    if rows.is_empty() {
        return Err(Error::MissingArm {
            trial: trial.to_string(),
            arm,
        });
    }
    for &r in rows {
        let present = match endpoint {
            Endpoint::Y => ds.y(r).is_some(),
            Endpoint::D => ds.d(r).is_some(),
        };
        if !present {
            return Err(Error::MissingRequiredColumn {
                column: endpoint.column().to_string(),
                trial: trial.to_string(),
                role: "fit-cell".to_string(),
            });
        }
    }
    let resp = |r: usize| -> f64 {
        match endpoint {
            Endpoint::Y => f64::from(ds.y(r).unwrap()),
            Endpoint::D => f64::from(ds.d(r).unwrap()),
        }
    };
    let (coefficients, convergence) = fit_cell(dm, rows, &resp, spec, init)?;
    Ok(ConditionalMeanModel {
        spec: spec.clone(),
        layout: layout.clone(),
        coefficients,
        trial: trial.to_string(),
        arm,
        endpoint,
        convergence,
    })
}

/// Rows of a (trial, arm) cell in dataset order.
pub fn cell_rows(ds: &TrialDataset, trial: &str, arm: u8) -> Result<Vec<usize>> {
    let rows: Vec<usize> = (0..ds.n_rows())
        .filter(|&i| ds.trial_label(i) == trial && ds.z(i) == Some(arm))
        .collect();
    if rows.is_empty() {
        return Err(Error::MissingArm {
            trial: trial.to_string(),
            arm,
        });
    }
    Ok(rows)
}
