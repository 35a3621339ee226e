//! Design-matrix construction: intercept, raw covariates, one-hot levels,
//! and cubic B-spline expansions of continuous covariates.
//!
//! A [`DesignLayout`] is a deterministic transformation from raw covariates
//! to model columns. Spline knots are placed at quantiles of the pooled
//! dataset at layout-construction time, so refits on resampled rows and
//! per-fold fits all share one fixed dictionary.

use serde::{Deserialize, Serialize};

use crate::data::{Covariate, TrialDataset};
use crate::error::{Error, Result};

use super::{Basis, GlmSpec};

/// Degree of the spline basis (cubic).
const DEGREE: usize = 3;

/// One output column of the design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    /// Raw value of covariate `cov`.
    Linear { cov: usize },
    /// `basis`-th retained cubic B-spline of covariate `cov` (the first
    /// basis function is dropped to avoid intercept collinearity).
    Spline { cov: usize, basis: usize },
    /// Indicator of covariate `cov` taking level code `level` (level 0 is
    /// the reference and gets no column).
    Level { cov: usize, level: u32 },
}

/// Fixed covariate-to-columns transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub terms: Vec<Term>,
    /// Extended knot vectors per covariate (only for spline-expanded ones).
    pub knots: Vec<Option<Vec<f64>>>,
    /// Number of raw covariates expected at prediction time.
    pub n_covariates: usize,
}

impl DesignLayout {
    pub fn n_columns(&self) -> usize {
        self.terms.len()
    }

    /// Build the layout for `spec.basis` over the dataset's covariates.
    ///
    /// Spline expansion applies to continuous covariates with a nonzero
    /// interior-knot count; zero knots fall back to the raw linear column,
    /// coefficient-for-coefficient identical to the linear basis.
    pub fn from_dataset(ds: &TrialDataset, spec: &GlmSpec) -> Self {
        let interior = match spec.basis {
            Basis::Linear => 0,
            Basis::Spline { interior_knots } => interior_knots,
        };
        let mut terms = vec![Term::Intercept];
        let mut knots: Vec<Option<Vec<f64>>> = vec![None; ds.n_covariates()];
        for (j, col) in ds.covariates().iter().enumerate() {
            match col {
                Covariate::Continuous(values) => {
                    let interior_knots = if interior > 0 {
                        quantile_knots(values, interior)
                    } else {
                        Vec::new()
                    };
                    if interior_knots.is_empty() {
                        terms.push(Term::Linear { cov: j });
                    } else {
                        let ext = extend_knots(values, &interior_knots);
                        // k interior knots give k + DEGREE + 1 basis
                        // functions; the first is dropped.
                        let n_basis = interior_knots.len() + DEGREE + 1;
                        for b in 1..n_basis {
                            terms.push(Term::Spline { cov: j, basis: b });
                        }
                        knots[j] = Some(ext);
                    }
                }
                Covariate::Categorical { levels, .. } => {
                    for level in 1..levels.len() as u32 {
                        terms.push(Term::Level { cov: j, level });
                    }
                }
            }
        }
        DesignLayout {
            terms,
            knots,
            n_covariates: ds.n_covariates(),
        }
    }

    /// Materialize the full n-by-k row-major matrix for a dataset.
    pub fn matrix(&self, ds: &TrialDataset) -> DesignMatrix {
        let n = ds.n_rows();
        let k = self.n_columns();
        let mut data = vec![0.0; n * k];
        let mut spline_buf = [0.0f64; DEGREE + 1];
        for row in 0..n {
            let out = &mut data[row * k..(row + 1) * k];
            self.fill_row(
                |cov| match &ds.covariates()[cov] {
                    Covariate::Continuous(v) => v[row],
                    Covariate::Categorical { codes, .. } => f64::from(codes[row]),
                },
                out,
                &mut spline_buf,
            );
        }
        DesignMatrix { k, data }
    }

    /// Expand one raw covariate vector into design columns.
    ///
    /// Categorical covariates are passed as their level codes.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_covariates {
            return Err(Error::DimensionMismatch {
                expected: self.n_covariates,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.n_columns()];
        let mut spline_buf = [0.0f64; DEGREE + 1];
        self.fill_row(|cov| x[cov], &mut out, &mut spline_buf);
        Ok(out)
    }

    fn fill_row(
        &self,
        raw: impl Fn(usize) -> f64,
        out: &mut [f64],
        spline_buf: &mut [f64; DEGREE + 1],
    ) {
        let mut i = 0;
        while i < self.terms.len() {
            match self.terms[i] {
                Term::Intercept => {
                    out[i] = 1.0;
                    i += 1;
                }
                Term::Linear { cov } => {
                    out[i] = raw(cov);
                    i += 1;
                }
                Term::Spline { cov, .. } => {
                    // All retained basis functions of this covariate are
                    // contiguous; evaluate once and scatter.
                    let knots = self.knots[cov].as_ref().unwrap();
                    let n_basis = knots.len() - DEGREE - 1;
                    let first_fn =
                        eval_bspline_row(knots, raw(cov), spline_buf);
                    let start = i;
                    let count = n_basis - 1; // basis 1..n_basis
                    for slot in out.iter_mut().skip(start).take(count) {
                        *slot = 0.0;
                    }
                    for (offset, &v) in spline_buf.iter().enumerate() {
                        let b = first_fn + offset;
                        if b >= 1 && b < n_basis {
                            out[start + (b - 1)] = v;
                        }
                    }
                    i += count;
                }
                Term::Level { cov, level } => {
                    out[i] = if raw(cov).round() as u32 == level { 1.0 } else { 0.0 };
                    i += 1;
                }
            }
        }
    }
}

/// Dense row-major design matrix.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub k: usize,
    pub data: Vec<f64>,
}

impl DesignMatrix {
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn n_rows(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.data.len() / self.k
        }
    }
}

/// Interior knots at equally spaced quantiles, deduplicated.
fn quantile_knots(values: &[f64], count: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut knots = Vec::with_capacity(count);
    for j in 1..=count {
        let q = j as f64 / (count + 1) as f64;
        let rank = q * (n - 1) as f64;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        let v = if lo == hi {
            sorted[lo]
        } else {
            sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
        };
        if knots.last().map_or(true, |&last: &f64| v > last) {
            knots.push(v);
        }
    }
    // Degenerate spread (constant column) yields no usable interior knots.
    let lo = sorted[0];
    let hi = sorted[n - 1];
    knots.retain(|&k| k > lo && k < hi);
    knots
}

/// Extended knot vector: boundary knots repeated DEGREE+1 times.
fn extend_knots(values: &[f64], interior: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut ext = Vec::with_capacity(interior.len() + 2 * (DEGREE + 1));
    ext.extend(std::iter::repeat(lo).take(DEGREE + 1));
    ext.extend_from_slice(interior);
    ext.extend(std::iter::repeat(hi).take(DEGREE + 1));
    ext
}

/// Evaluate the DEGREE+1 B-spline basis functions that are nonzero at `x`
/// (Cox-de Boor recursion). Returns the index of the first nonzero basis
/// function; values land in `out`. `x` is clamped to the knot range.
fn eval_bspline_row(ext: &[f64], x: f64, out: &mut [f64; DEGREE + 1]) -> usize {
    let n_basis = ext.len() - DEGREE - 1;
    let lo = ext[DEGREE];
    let hi = ext[n_basis];
    let x = x.clamp(lo, hi);
    // Knot span: largest i with ext[i] <= x < ext[i+1], clamped to the
    // valid range [DEGREE, n_basis - 1].
    let mut span = match ext[..=n_basis]
        .iter()
        .rposition(|&t| t <= x)
    {
        Some(i) => i,
        None => DEGREE,
    };
    span = span.clamp(DEGREE, n_basis - 1);

    let mut left = [0.0f64; DEGREE + 1];
    let mut right = [0.0f64; DEGREE + 1];
    out.fill(0.0);
    out[0] = 1.0;
    for j in 1..=DEGREE {
        left[j] = x - ext[span + 1 - j];
        right[j] = ext[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let tmp = if denom != 0.0 { out[r] / denom } else { 0.0 };
            out[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        out[j] = saved;
    }
    span - DEGREE
}
