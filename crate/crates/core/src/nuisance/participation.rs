//! Trial-participation propensities f(S = s | X): a multinomial logit over
//! trial labels, fit by full Newton iteration on the ridge-penalized
//! log-likelihood.

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::linalg::cholesky_solve_in_place;

use super::design::{DesignLayout, DesignMatrix};
use super::glm::{FitMeta, RIDGE_ESCALATED};
use super::{GlmSpec, EPS_PROBABILITY};

/// Coefficient magnitude beyond which the fit is declared separated.
const SEPARATION_BOUND: f64 = 12.0;

/// Multinomial participation model over a fixed label set. The first label
/// is the reference class (all-zero coefficients).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticipationModel {
    pub labels: Vec<String>,
    pub layout: DesignLayout,
    /// Row-major (labels.len() - 1) x layout.n_columns() coefficient block
    /// for the non-reference classes, in label order.
    pub coefficients: Vec<f64>,
    /// Number of fitted rows per label, in label order.
    pub class_counts: Vec<usize>,
    pub convergence: FitMeta,
}

impl ParticipationModel {
    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn class_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Class probabilities at a raw covariate vector, floored to
    /// `EPS_PROBABILITY` and renormalized to sum to one.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let encoded = self.layout.encode(x)?;
        Ok(self.predict_encoded(&encoded))
    }

    /// Class probabilities from an already-encoded design row.
    pub fn predict_encoded(&self, row: &[f64]) -> Vec<f64> {
        self.predict_encoded_flagged(row).0
    }

    /// Probabilities plus a flag for whether any class sat below the floor
    /// (the raw material for overlap diagnostics).
    pub fn predict_encoded_flagged(&self, row: &[f64]) -> (Vec<f64>, bool) {
        let mut p = self.raw_probabilities(row);
        let floored = p.iter().any(|v| *v < EPS_PROBABILITY);
        floor_and_renormalize(&mut p);
        (p, floored)
    }

    /// Softmax probabilities without the floor (used inside the fit).
    fn raw_probabilities(&self, row: &[f64]) -> Vec<f64> {
        let k = self.layout.n_columns();
        let c = self.labels.len();
        let mut eta = vec![0.0; c];
        for class in 1..c {
            let beta = &self.coefficients[(class - 1) * k..class * k];
            let mut s = 0.0;
            for j in 0..k {
                s += row[j] * beta[j];
            }
            eta[class] = s;
        }
        softmax(&eta)
    }
}

/// Numerically stable softmax.
fn softmax(eta: &[f64]) -> Vec<f64> {
    let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = eta.iter().map(|e| (e - m).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

/// Floor every class probability at `EPS_PROBABILITY`, then renormalize.
fn floor_and_renormalize(p: &mut [f64]) {
    let mut total = 0.0;
    for v in p.iter_mut() {
        *v = v.max(EPS_PROBABILITY);
        total += *v;
    }
    for v in p.iter_mut() {
        *v /= total;
    }
}

/// Fit the participation model on the rows whose trial label is in
/// `labels`. Label order is preserved as given and defines the class order;
/// the first label is the reference class.
pub fn fit_participation(
    ds: &TrialDataset,
    labels: &[String],
    spec: &GlmSpec,
) -> Result<ParticipationModel> {
    if labels.len() < 2 {
        return Err(Error::SingleLabel(
            labels.first().cloned().unwrap_or_default(),
        ));
    }
    let layout = DesignLayout::from_dataset(ds, spec);
    let dm = layout.matrix(ds);
    let rows: Vec<usize> = (0..ds.n_rows())
        .filter(|&i| labels.iter().any(|l| l == ds.trial_label(i)))
        .collect();
    let class: Vec<usize> = rows
        .iter()
        .map(|&i| labels.iter().position(|l| l == ds.trial_label(i)).unwrap())
        .collect();
    fit_participation_rows(&dm, &rows, &class, labels, &layout, spec, None)
}

/// Core fit on explicit rows and class assignments (bootstrap fast path;
/// `init` warm-starts the iteration from previous coefficients).
pub fn fit_participation_rows(
    dm: &DesignMatrix,
    rows: &[usize],
    class: &[usize],
    labels: &[String],
    layout: &DesignLayout,
    spec: &GlmSpec,
    init: Option<&[f64]>,
) -> Result<ParticipationModel> {
    let c = labels.len();
    if c < 2 {
        return Err(Error::SingleLabel(
            labels.first().cloned().unwrap_or_default(),
        ));
    }
    let mut class_counts = vec![0usize; c];
    for &cl in class {
        class_counts[cl] += 1;
    }
    for (label, &count) in labels.iter().zip(&class_counts) {
        if count == 0 {
            return Err(Error::EmptyRole(label.clone()));
        }
    }

    match newton_multinomial(dm, rows, class, c, spec, spec.ridge, true, init) {
        Ok((coefficients, mut meta)) => {
            if meta.separation_detected {
                let (coef2, mut meta2) =
                    newton_multinomial(dm, rows, class, c, spec, RIDGE_ESCALATED, false, None)?;
                meta2.separation_detected = true;
                return Ok(build(labels, layout, coef2, class_counts, meta2));
            }
            meta.ridge_used = spec.ridge;
            Ok(build(labels, layout, coefficients, class_counts, meta))
        }
        Err(Error::SingularSystem) => {
            let (coefficients, mut meta) =
                newton_multinomial(dm, rows, class, c, spec, RIDGE_ESCALATED, false, None)?;
            meta.separation_detected = true;
            Ok(build(labels, layout, coefficients, class_counts, meta))
        }
        Err(e) => Err(e),
    }
}

fn build(
    labels: &[String],
    layout: &DesignLayout,
    coefficients: Vec<f64>,
    class_counts: Vec<usize>,
    convergence: FitMeta,
) -> ParticipationModel {
    ParticipationModel {
        labels: labels.to_vec(),
        layout: layout.clone(),
        coefficients,
        class_counts,
        convergence,
    }
}

/// Full Newton iteration on the (C-1)·k parameter block. The penalized
/// Hessian is symmetric positive definite, so each step is one Cholesky
/// solve.
#[allow(clippy::too_many_arguments)]
fn newton_multinomial(
    dm: &DesignMatrix,
    rows: &[usize],
    class: &[usize],
    c: usize,
    spec: &GlmSpec,
    ridge: f64,
    halt_on_separation: bool,
    init: Option<&[f64]>,
) -> Result<(Vec<f64>, FitMeta)> {
    let k = dm.k;
    let p = (c - 1) * k;
    let n = rows.len() as f64;
    let mut beta = match init {
        Some(b) if b.len() == p => b.to_vec(),
        _ => vec![0.0; p],
    };
    let mut hess = vec![0.0; p * p];
    let mut score = vec![0.0; p];
    let mut eta = vec![0.0; c];
    let mut last_score_norm = f64::INFINITY;

    for iter in 1..=spec.max_iterations {
        hess.fill(0.0);
        score.fill(0.0);
        for (pos, &r) in rows.iter().enumerate() {
            let x = dm.row(r);
            for cl in 1..c {
                let b = &beta[(cl - 1) * k..cl * k];
                let mut s = 0.0;
                for j in 0..k {
                    s += x[j] * b[j];
                }
                eta[cl] = s;
            }
            eta[0] = 0.0;
            let prob = softmax(&eta);
            let y = class[pos];
            for a in 1..c {
                let resid = (if y == a { 1.0 } else { 0.0 }) - prob[a];
                let block_a = (a - 1) * k;
                for j in 0..k {
                    score[block_a + j] += x[j] * resid;
                }
                for b in a..c {
                    let w = if a == b {
                        prob[a] * (1.0 - prob[a])
                    } else {
                        -prob[a] * prob[b]
                    };
                    let block_b = (b - 1) * k;
                    for ji in 0..k {
                        let wxi = w * x[ji];
                        for jj in 0..k {
                            hess[(block_a + ji) * p + (block_b + jj)] += wxi * x[jj];
                        }
                    }
                }
            }
        }
        // Mirror the upper block triangle and add the ridge.
        for i in 0..p {
            for j in (i + 1)..p {
                hess[j * p + i] = hess[i * p + j];
            }
        }
        for j in 0..p {
            score[j] -= ridge * beta[j];
            hess[j * p + j] += ridge;
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
        cholesky_solve_in_place(&mut hess, &mut step, p)?;
        for j in 0..p {
            beta[j] += step[j];
        }
        if !beta.iter().all(|b| b.is_finite()) {
            return Err(Error::NonFinite(format!(
                "participation coefficients diverged at iteration {iter}"
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
