//! Partial identification of stratum-level treatment effects and of the
//! target ITT under minimal instrumental-variable assumptions.
//!
//! Three interval constructions are provided. [`balke_pearl_bounds`] gives
//! the tight envelope for a binary outcome from the joint law of outcome and
//! uptake given assignment within one covariate stratum. It is the value of
//! the linear program over joint distributions of the sixteen response types
//! compatible with the observed cells. [`manski_pepper_bounds`] gives
//! worst-case bounds for an outcome known to live in `[K0, K1]`, replacing
//! the censored potential-outcome term by each endpoint in turn.
//! [`partial_id_itt`] combines a complier-weighted stratum interval with the
//! target compliance contrast and averages over the target trial.
//!
//! Stratum probabilities can be supplied directly, read off empirically from
//! discrete covariate strata, or evaluated from a factorized fit
//! `P(D | X, Z) * P(Y | D, X, Z)` via [`StratumModel`].

use serde::{Deserialize, Serialize};

use crate::data::{Role, TrialDataset};
use crate::error::{Error, Result};
use crate::estimators::{
    clamp_estimate, require_target_compliance, NuisanceSpecs, Prepared, SensitivityParameter,
};
use crate::nuisance::{
    cell_rows, fit_glm, fit_glm_rows, ConditionalMeanModel, DesignLayout, Endpoint, GlmSpec,
};

/// Tolerance for the per-arm simplex check on stratum probabilities.
pub const EPS_SIMPLEX: f64 = 1e-9;

/// Joint conditional probabilities P(Y = y, D = d | Z = z) within one
/// covariate stratum, for y, d, z each in {0, 1}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumProbabilities {
    pub p_y0_d0_z0: f64,
    pub p_y0_d1_z0: f64,
    pub p_y1_d0_z0: f64,
    pub p_y1_d1_z0: f64,
    pub p_y0_d0_z1: f64,
    pub p_y0_d1_z1: f64,
    pub p_y1_d0_z1: f64,
    pub p_y1_d1_z1: f64,
}

impl StratumProbabilities {
    /// Build the table by evaluating `f(y, d, z)` on all eight cells.
    pub fn from_fn(f: impl Fn(u8, u8, u8) -> f64) -> Self {
        Self {
            p_y0_d0_z0: f(0, 0, 0),
            p_y0_d1_z0: f(0, 1, 0),
            p_y1_d0_z0: f(1, 0, 0),
            p_y1_d1_z0: f(1, 1, 0),
            p_y0_d0_z1: f(0, 0, 1),
            p_y0_d1_z1: f(0, 1, 1),
            p_y1_d0_z1: f(1, 0, 1),
            p_y1_d1_z1: f(1, 1, 1),
        }
    }

    /// P(Y = y, D = d | Z = z).
    pub fn p(&self, y: u8, d: u8, z: u8) -> f64 {
        match (y, d, z) {
            (0, 0, 0) => self.p_y0_d0_z0,
            (0, 1, 0) => self.p_y0_d1_z0,
            (1, 0, 0) => self.p_y1_d0_z0,
            (1, 1, 0) => self.p_y1_d1_z0,
            (0, 0, 1) => self.p_y0_d0_z1,
            (0, 1, 1) => self.p_y0_d1_z1,
            (1, 0, 1) => self.p_y1_d0_z1,
            (1, 1, 1) => self.p_y1_d1_z1,
            _ => f64::NAN,
        }
    }

    /// Each entry must lie in [0, 1] and each assignment arm must sum to one
    /// within [`EPS_SIMPLEX`].
    pub fn validate(&self) -> Result<()> {
        for z in [0u8, 1] {
            let mut sum = 0.0;
            for y in [0u8, 1] {
                for d in [0u8, 1] {
                    let v = self.p(y, d, z);
                    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                        return Err(Error::InvalidDistribution(format!(
                            "P(Y={y}, D={d} | Z={z}) = {v} is outside [0, 1]"
                        )));
                    }
                    sum += v;
                }
            }
            if (sum - 1.0).abs() > EPS_SIMPLEX {
                return Err(Error::InvalidDistribution(format!(
                    "arm z={z} sums to {sum}, not 1"
                )));
            }
        }
        Ok(())
    }
}

/// Range `[K0, K1]` assumed to contain the outcome almost surely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBounds {
    pub k0: f64,
    pub k1: f64,
}

impl OutcomeBounds {
    pub fn new(k0: f64, k1: f64) -> Result<Self> {
        let out = Self { k0, k1 };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.k0.is_finite() || !self.k1.is_finite() || self.k0 > self.k1 {
            return Err(Error::InvalidBounds {
                k0: self.k0,
                k1: self.k1,
            });
        }
        Ok(())
    }

    /// The natural range for a binary outcome.
    pub fn unit() -> Self {
        Self { k0: 0.0, k1: 1.0 }
    }
}

/// Which interval construction produced a [`BoundsResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundsMethod {
    BalkePearl,
    ManskiPepper,
    PartialIdItt,
}

impl BoundsMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundsMethod::BalkePearl => "balke-pearl",
            BoundsMethod::ManskiPepper => "manski-pepper",
            BoundsMethod::PartialIdItt => "partial-id-itt",
        }
    }
}

impl std::fmt::Display for BoundsMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labelled sub-interval contributing to a [`BoundsResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEnvelope {
    pub label: String,
    pub lower: f64,
    pub upper: f64,
}

/// A partial identification interval together with the labelled envelopes it
/// was assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    pub lower: f64,
    pub upper: f64,
    pub method: BoundsMethod,
    pub detail: Vec<StratumEnvelope>,
}

/// Envelope over the four admissible lower expressions and the four
/// admissible upper expressions for E[Y(D = 0)] in one stratum.
fn bp_envelope_y0(p: &StratumProbabilities) -> (f64, f64) {
    let lower = [
        p.p(1, 0, 1),
        p.p(1, 0, 0),
        p.p(1, 0, 0) + p.p(1, 1, 0) - p.p(0, 0, 1) - p.p(1, 1, 1),
        p.p(0, 1, 0) + p.p(1, 0, 0) - p.p(0, 0, 1) - p.p(0, 1, 1),
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    let upper = [
        1.0 - p.p(0, 0, 1),
        1.0 - p.p(0, 0, 0),
        p.p(0, 1, 0) + p.p(1, 0, 0) + p.p(1, 0, 1) + p.p(1, 1, 1),
        p.p(1, 0, 0) + p.p(1, 1, 0) + p.p(0, 1, 1) + p.p(1, 0, 1),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    (lower, upper)
}

/// Envelope for E[Y(D = 1)]; mirrors [`bp_envelope_y0`] with the roles of
/// the two uptake levels exchanged.
fn bp_envelope_y1(p: &StratumProbabilities) -> (f64, f64) {
    let lower = [
        p.p(1, 1, 0),
        p.p(1, 1, 1),
        -p.p(0, 0, 0) - p.p(0, 1, 0) + p.p(0, 0, 1) + p.p(1, 1, 1),
        -p.p(0, 1, 0) - p.p(1, 0, 0) + p.p(1, 0, 1) + p.p(1, 1, 1),
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    let upper = [
        1.0 - p.p(0, 1, 1),
        1.0 - p.p(0, 1, 0),
        p.p(0, 0, 0) + p.p(1, 1, 0) + p.p(1, 0, 1) + p.p(1, 1, 1),
        p.p(1, 0, 0) + p.p(1, 1, 0) + p.p(0, 0, 1) + p.p(1, 1, 1),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    (lower, upper)
}

/// Tight bounds on the stratum treatment effect E[Y(1)] - E[Y(0)] for a
/// binary outcome under randomized assignment and exclusion within the
/// stratum. Inputs incompatible with those assumptions (crossed envelopes)
/// are rejected, since no joint law of response types reproduces them.
pub fn balke_pearl_bounds(p: StratumProbabilities) -> Result<BoundsResult> {
    p.validate()?;
    let (l0, u0) = bp_envelope_y0(&p);
    let (l1, u1) = bp_envelope_y1(&p);
    for (label, lo, hi) in [("y(0)", l0, u0), ("y(1)", l1, u1)] {
        if lo > hi + EPS_SIMPLEX {
            return Err(Error::InvalidDistribution(format!(
                "envelope for {label} is empty ({lo} > {hi}); the stratum law \
                 contradicts the instrumental-variable assumptions"
            )));
        }
    }
    // Touching envelopes can cross by rounding dust; nudge them closed.
    let (u0, u1) = (u0.max(l0), u1.max(l1));
    Ok(BoundsResult {
        lower: l1 - u0,
        upper: u1 - l0,
        method: BoundsMethod::BalkePearl,
        detail: vec![
            StratumEnvelope {
                label: "y(0)".into(),
                lower: l0,
                upper: u0,
            },
            StratumEnvelope {
                label: "y(1)".into(),
                lower: l1,
                upper: u1,
            },
        ],
    })
}

/// Identified-plus-censored decomposition at one assignment level:
/// `E[Y | D = d, Z = z] * P(D = d | Z = z) + K * P(D != d | Z = z)`.
fn mp_psi(mean: f64, p_d: f64, k: f64) -> f64 {
    let identified = if p_d > 0.0 { mean * p_d } else { 0.0 };
    identified + k * (1.0 - p_d)
}

/// Worst-case bounds on E[Y(D = d)] in one stratum for an outcome confined
/// to `[K0, K1]`: the censored term is replaced by K0 (lower) or K1 (upper)
/// at each assignment level, then averaged over assignment with the supplied
/// weights. Inputs are indexed by z in {0, 1}.
pub fn manski_pepper_bounds(
    cell_means: [f64; 2],
    p_d_given_z: [f64; 2],
    pi_z: [f64; 2],
    k: OutcomeBounds,
    d: u8,
) -> Result<BoundsResult> {
    k.validate()?;
    if d > 1 {
        return Err(Error::InvalidConfig(format!(
            "uptake level must be 0 or 1, got {d}"
        )));
    }
    let pi_sum: f64 = pi_z.iter().sum();
    if (pi_sum - 1.0).abs() > EPS_SIMPLEX {
        return Err(Error::InvalidDistribution(format!(
            "assignment weights sum to {pi_sum}, not 1"
        )));
    }
    for z in 0..2 {
        let (pi, pd, mean) = (pi_z[z], p_d_given_z[z], cell_means[z]);
        if !pi.is_finite() || !(0.0..=1.0).contains(&pi) {
            return Err(Error::InvalidDistribution(format!(
                "P(Z={z}) = {pi} is outside [0, 1]"
            )));
        }
        if !pd.is_finite() || !(0.0..=1.0).contains(&pd) {
            return Err(Error::InvalidDistribution(format!(
                "P(D={d} | Z={z}) = {pd} is outside [0, 1]"
            )));
        }
        // The observed cell mean is only constrained (or even defined) when
        // the cell carries mass.
        if pd > 0.0 && !(mean >= k.k0 - EPS_SIMPLEX && mean <= k.k1 + EPS_SIMPLEX) {
            return Err(Error::InvalidDistribution(format!(
                "E[Y | D={d}, Z={z}] = {mean} falls outside [{}, {}]",
                k.k0, k.k1
            )));
        }
    }
    let mut lower = 0.0;
    let mut upper = 0.0;
    let mut detail = Vec::with_capacity(2);
    for z in 0..2 {
        let lo = mp_psi(cell_means[z], p_d_given_z[z], k.k0);
        let hi = mp_psi(cell_means[z], p_d_given_z[z], k.k1);
        lower += pi_z[z] * lo;
        upper += pi_z[z] * hi;
        detail.push(StratumEnvelope {
            label: format!("z={z}"),
            lower: lo,
            upper: hi,
        });
    }
    Ok(BoundsResult {
        lower,
        upper,
        method: BoundsMethod::ManskiPepper,
        detail,
    })
}

/// Endpoints of `base + (1 - share) * cc * tau` over `tau` ranging across
/// `[tau_min, tau_max]`, where `base` is the complier contribution. Sorting
/// the two endpoints absorbs both a negative compliance contrast and an
/// inverted tau range.
fn noncomplier_endpoints(share: f64, cc: f64, tau_min: f64, tau_max: f64) -> (f64, f64) {
    let a = (1.0 - share) * cc * tau_min;
    let b = (1.0 - share) * cc * tau_max;
    (a.min(b), a.max(b))
}

/// Interval for the target ITT when the stratum effect is only partially
/// identified: compliers experience the thresholded Wald contrast, while the
/// noncomplier effect is confined to `[-E[Y | placebo arm, X], 0]` (at best
/// the treatment removes all incidence, at worst none). The stratum interval
/// is scaled by the target compliance contrast `mu_D1(X; t) - sens(X)` and
/// averaged over usable target rows.
pub fn partial_id_itt(
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
    sens: &SensitivityParameter,
) -> Result<BoundsResult> {
    sens.validate()?;
    require_target_compliance(ds)?;
    let prepared = Prepared::new(ds, specs)?;
    let fits = prepared.fit_posthoc(None, None, false)?;
    let cols = prepared.posthoc_columns(&fits, sens, None)?;

    let mut base_sum = 0.0;
    let mut nc_lo_sum = 0.0;
    let mut nc_hi_sum = 0.0;
    let mut used = 0usize;
    for i in 0..ds.n_rows() {
        if ds.role_of_row(i) != Role::Target || !cols.include[i] {
            continue;
        }
        let wald = clamp_estimate(cols.wald[i])?;
        let share = cols.delta_d_h1[i].clamp(0.0, 1.0);
        let tau_min = -cols.mu_y0_h1[i];
        let cc = cols.cc[i];
        let (nc_lo, nc_hi) = noncomplier_endpoints(share, cc, tau_min, 0.0);
        base_sum += share * wald * cc;
        nc_lo_sum += nc_lo;
        nc_hi_sum += nc_hi;
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllStrataDegenerate);
    }
    let n = used as f64;
    let (base, nc_lo, nc_hi) = (base_sum / n, nc_lo_sum / n, nc_hi_sum / n);
    Ok(BoundsResult {
        lower: base + nc_lo,
        upper: base + nc_hi,
        method: BoundsMethod::PartialIdItt,
        detail: vec![
            StratumEnvelope {
                label: "complier".into(),
                lower: base,
                upper: base,
            },
            StratumEnvelope {
                label: "noncomplier".into(),
                lower: nc_lo,
                upper: nc_hi,
            },
        ],
    })
}

/// Empirical joint conditional frequencies over an explicit stratum of rows
/// from one trial. Exact on discrete covariates; every row must carry z, d,
/// and y, and both assignment arms must be populated.
pub fn empirical_stratum_probabilities(
    ds: &TrialDataset,
    trial: &str,
    rows: &[usize],
) -> Result<StratumProbabilities> {
    let mut counts = [[[0usize; 2]; 2]; 2];
    let mut n_z = [0usize; 2];
    for &r in rows {
        if ds.trial_label(r) != trial {
            return Err(Error::InvalidConfig(format!(
                "row {r} belongs to trial '{}', not '{trial}'",
                ds.trial_label(r)
            )));
        }
        let (z, d, y) = match (ds.z(r), ds.d(r), ds.y(r)) {
            (Some(z), Some(d), Some(y)) => (z as usize, d as usize, y as usize),
            _ => {
                return Err(Error::MissingRequiredColumn {
                    column: "z, d, y".into(),
                    trial: trial.into(),
                    role: "stratum-probabilities".into(),
                })
            }
        };
        counts[y][d][z] += 1;
        n_z[z] += 1;
    }
    for z in 0..2 {
        if n_z[z] == 0 {
            return Err(Error::InvalidDistribution(format!(
                "stratum has no rows with z={z}"
            )));
        }
    }
    Ok(StratumProbabilities::from_fn(|y, d, z| {
        counts[y as usize][d as usize][z as usize] as f64 / n_z[z as usize] as f64
    }))
}

/// Factorized fit of the joint stratum law: `P(D = 1 | X, Z = z)` from the
/// uptake regression in each arm and `P(Y = 1 | X, D = d, Z = z)` from the
/// outcome regression in each (arm, uptake) cell.
#[derive(Debug)]
pub struct StratumModel {
    /// P(D = 1 | X, Z = z), indexed by z.
    d_model: [ConditionalMeanModel; 2],
    /// P(Y = 1 | X, D = d, Z = z), indexed by [z][d].
    y_model: [[ConditionalMeanModel; 2]; 2],
}

impl StratumModel {
    pub fn fit(
        ds: &TrialDataset,
        trial: &str,
        d_spec: &GlmSpec,
        y_spec: &GlmSpec,
    ) -> Result<Self> {
        let d_model = [
            fit_glm(ds, trial, 0, Endpoint::D, d_spec)?,
            fit_glm(ds, trial, 1, Endpoint::D, d_spec)?,
        ];
        let layout = DesignLayout::from_dataset(ds, y_spec);
        let dm = layout.matrix(ds);
        let fit_cell = |z: u8, d: u8| -> Result<ConditionalMeanModel> {
            let rows: Vec<usize> = cell_rows(ds, trial, z)?
                .into_iter()
                .filter(|&r| ds.d(r) == Some(d))
                .collect();
            if rows.is_empty() {
                return Err(Error::InvalidDistribution(format!(
                    "trial '{trial}' has no rows with z={z} and d={d}, so \
                     P(Y | D={d}, X, Z={z}) is not estimable; use \
                     empirical_stratum_probabilities on discrete strata"
                )));
            }
            fit_glm_rows(ds, &layout, &dm, &rows, trial, z, Endpoint::Y, y_spec, None)
        };
        let y_model = [
            [fit_cell(0, 0)?, fit_cell(0, 1)?],
            [fit_cell(1, 0)?, fit_cell(1, 1)?],
        ];
        Ok(Self { d_model, y_model })
    }

    /// Evaluate the factorized law at one covariate point. Sums to one per
    /// arm by construction.
    pub fn probabilities_at(&self, x: &[f64]) -> Result<StratumProbabilities> {
        let pd1 = [self.d_model[0].predict(x)?, self.d_model[1].predict(x)?];
        let mut py1 = [[0.0f64; 2]; 2];
        for z in 0..2 {
            for d in 0..2 {
                py1[z][d] = self.y_model[z][d].predict(x)?;
            }
        }
        Ok(StratumProbabilities::from_fn(|y, d, z| {
            let (z, d) = (z as usize, d as usize);
            let p_d = if d == 1 { pd1[z] } else { 1.0 - pd1[z] };
            let p_y = if y == 1 { py1[z][d] } else { 1.0 - py1[z][d] };
            p_d * p_y
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariate, RoleConfig};
    use crate::estimators::estimate_itt_reg_posthoc;

    fn perfect_compliance(p_y1_z1: f64, p_y1_z0: f64) -> StratumProbabilities {
        StratumProbabilities::from_fn(|y, d, z| {
            if d != z {
                return 0.0;
            }
            let p1 = if z == 1 { p_y1_z1 } else { p_y1_z0 };
            if y == 1 {
                p1
            } else {
                1.0 - p1
            }
        })
    }

    #[test]
    fn off_simplex_distribution_is_rejected() {
        let mut p = perfect_compliance(0.7, 0.4);
        p.p_y1_d1_z1 = 0.699_999;
        let err = balke_pearl_bounds(p).unwrap_err();
        assert!(matches!(err, Error::InvalidDistribution(_)), "{err}");
        let mut q = perfect_compliance(0.7, 0.4);
        q.p_y0_d1_z1 = -0.1;
        q.p_y1_d1_z1 = 1.1;
        assert!(matches!(
            balke_pearl_bounds(q),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn perfect_compliance_collapses_to_observed_contrast() {
        let out = balke_pearl_bounds(perfect_compliance(0.7, 0.4)).unwrap();
        assert!((out.lower - 0.3).abs() < 1e-12, "lower = {}", out.lower);
        assert!((out.upper - 0.3).abs() < 1e-12, "upper = {}", out.upper);
        assert_eq!(out.detail.len(), 2);
        let y0 = &out.detail[0];
        assert!((y0.lower - 0.4).abs() < 1e-12 && (y0.upper - 0.4).abs() < 1e-12);
    }

    #[test]
    fn balke_pearl_interval_is_ordered_and_in_unit_range() {
        // A response-type construction: defiers absent, 30% always-takers,
        // 30% compliers, 40% never-takers, with outcome means differing by
        // principal stratum. Feasible by construction.
        let p = StratumProbabilities {
            p_y0_d0_z0: 0.42,
            p_y0_d1_z0: 0.06,
            p_y1_d0_z0: 0.28,
            p_y1_d1_z0: 0.24,
            p_y0_d0_z1: 0.24,
            p_y0_d1_z1: 0.18,
            p_y1_d0_z1: 0.16,
            p_y1_d1_z1: 0.42,
        };
        let out = balke_pearl_bounds(p).unwrap();
        assert!(out.lower <= out.upper);
        assert!(out.lower >= -1.0 - 1e-12 && out.upper <= 1.0 + 1e-12);
    }

    #[test]
    fn manski_pepper_width_matches_censored_mass() {
        let out = manski_pepper_bounds(
            [0.3, 0.6],
            [0.2, 0.8],
            [0.5, 0.5],
            OutcomeBounds::unit(),
            1,
        )
        .unwrap();
        assert!(((out.upper - out.lower) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn manski_pepper_collapses_without_censoring() {
        let out = manski_pepper_bounds(
            [0.3, 0.6],
            [1.0, 1.0],
            [0.25, 0.75],
            OutcomeBounds::unit(),
            1,
        )
        .unwrap();
        let mean = 0.25 * 0.3 + 0.75 * 0.6;
        assert!((out.lower - mean).abs() < 1e-12);
        assert!((out.upper - mean).abs() < 1e-12);
    }

    #[test]
    fn manski_pepper_rejects_bad_inputs() {
        assert!(matches!(
            OutcomeBounds::new(1.0, 0.0),
            Err(Error::InvalidBounds { .. })
        ));
        assert!(matches!(
            manski_pepper_bounds([0.3, 0.6], [0.5, 0.5], [0.6, 0.6], OutcomeBounds::unit(), 1),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(matches!(
            manski_pepper_bounds([1.4, 0.6], [0.5, 0.5], [0.5, 0.5], OutcomeBounds::unit(), 1),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(matches!(
            manski_pepper_bounds([0.3, 0.6], [0.5, 0.5], [0.5, 0.5], OutcomeBounds::unit(), 2),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn manski_pepper_width_is_monotone_in_outcome_range() {
        let mut prev = -1.0;
        for k1 in [0.2, 0.5, 1.0, 2.0] {
            let out = manski_pepper_bounds(
                [0.1, 0.2],
                [0.7, 0.4],
                [0.5, 0.5],
                OutcomeBounds::new(0.0, k1).unwrap(),
                0,
            )
            .unwrap();
            let width = out.upper - out.lower;
            assert!(width >= prev);
            prev = width;
        }
    }

    #[test]
    fn noncomplier_endpoints_sort_under_sign_flips() {
        // Negative compliance contrast flips the interval.
        let (lo, hi) = noncomplier_endpoints(0.4, -0.5, -0.8, 0.0);
        assert!(lo <= hi);
        assert!((hi - 0.6 * 0.5 * 0.8).abs() < 1e-12);
        assert_eq!(lo, 0.0);
        // Degenerate tau range collapses the interval.
        let (lo, hi) = noncomplier_endpoints(0.4, 0.5, 0.3, 0.3);
        assert!((lo - hi).abs() < 1e-15);
    }

    /// Four-block dataset: h1 with controlled compliance and outcomes, and a
    /// target trial with observed uptake. Covariate is an even alternation
    /// so saturated-by-construction fits reproduce cell means exactly.
    fn posthoc_dataset(h1_d_equals_z: bool) -> TrialDataset {
        let mut x = Vec::new();
        let mut z = Vec::new();
        let mut d = Vec::new();
        let mut y = Vec::new();
        let mut s = Vec::new();
        let push = |trial: &str, zv: u8, dv: u8, yv: u8, count: usize,
                        x_: &mut Vec<f64>, z_: &mut Vec<Option<u8>>, d_: &mut Vec<Option<u8>>,
                        y_: &mut Vec<Option<u8>>, s_: &mut Vec<String>| {
            for i in 0..count {
                x_.push(if i % 2 == 0 { 0.0 } else { 1.0 });
                z_.push(Some(zv));
                d_.push(Some(dv));
                y_.push(Some(yv));
                s_.push(trial.to_string());
            }
        };
        if h1_d_equals_z {
            // Perfect compliance: E[Y|z=1] = 0.6, E[Y|z=0] = 0.4.
            push("h1", 1, 1, 1, 120, &mut x, &mut z, &mut d, &mut y, &mut s);
            push("h1", 1, 1, 0, 80, &mut x, &mut z, &mut d, &mut y, &mut s);
            push("h1", 0, 0, 1, 80, &mut x, &mut z, &mut d, &mut y, &mut s);
            push("h1", 0, 0, 0, 120, &mut x, &mut z, &mut d, &mut y, &mut s);
        } else {
            // Partial uptake with a protective effect: delta_d = 0.5,
            // delta_y = -0.2, so the Wald contrast is -0.4.
            push("h1", 1, 1, 1, 60, &mut x, &mut z, &mut d, &mut y, &mut s);
            push("h1", 1, 1, 0, 90, &mut x, &mut z, &mut d, &mut y, &mut s);
            push("h1", 1, 0, 1, 20, &mut x, &mut z, &mut d, &mut y, &mut s);
            push("h1", 1, 0, 0, 30, &mut x, &mut z, &mut d, &mut y, &mut s);
            push("h1", 0, 1, 1, 30, &mut x, &mut z, &mut d, &mut y, &mut s);
            push("h1", 0, 1, 0, 20, &mut x, &mut z, &mut d, &mut y, &mut s);
            push("h1", 0, 0, 1, 90, &mut x, &mut z, &mut d, &mut y, &mut s);
            push("h1", 0, 0, 0, 60, &mut x, &mut z, &mut d, &mut y, &mut s);
        }
        // Target: uptake 0.7 on the assigned arm.
        push("t", 1, 1, 0, 70, &mut x, &mut z, &mut d, &mut y, &mut s);
        push("t", 1, 0, 0, 30, &mut x, &mut z, &mut d, &mut y, &mut s);
        push("t", 0, 0, 0, 100, &mut x, &mut z, &mut d, &mut y, &mut s);
        TrialDataset::from_parts(
            RoleConfig::new("t", "h1", None),
            vec!["x1".into()],
            vec![Covariate::Continuous(x)],
            z,
            d,
            y,
            s,
        )
        .unwrap()
    }

    fn identity_specs() -> NuisanceSpecs {
        use crate::nuisance::{Basis, Link};
        let id = GlmSpec::new(Link::Identity, Basis::Linear);
        NuisanceSpecs {
            outcome: id.clone(),
            treatment: id,
            ..NuisanceSpecs::logit_linear()
        }
    }

    #[test]
    fn full_compliance_interval_collapses_to_the_regression_point() {
        let ds = posthoc_dataset(true);
        let specs = identity_specs();
        let sens = SensitivityParameter::zero();
        let out = partial_id_itt(&ds, &specs, &sens).unwrap();
        let point = estimate_itt_reg_posthoc(&ds, &specs, &sens).unwrap().point;
        // Identity fits reproduce d = z up to the ridge penalty, so the
        // noncomplier share is not exactly zero.
        assert!((out.lower - point).abs() < 1e-5, "{} vs {point}", out.lower);
        assert!((out.upper - point).abs() < 1e-5, "{} vs {point}", out.upper);
        assert!(out.lower <= out.upper);
    }

    #[test]
    fn partial_interval_contains_the_point_identified_truth() {
        // In this law the stratum effect is homogeneous (wald = -0.4) and
        // sits inside the assumed noncomplier range [-0.6, 0]; target uptake
        // is 0.7, so the true ITT is -0.28 and must be covered.
        let ds = posthoc_dataset(false);
        let specs = identity_specs();
        let sens = SensitivityParameter::zero();
        let out = partial_id_itt(&ds, &specs, &sens).unwrap();
        assert!(
            out.lower <= -0.28 + 1e-9 && -0.28 - 1e-9 <= out.upper,
            "[{}, {}]",
            out.lower,
            out.upper
        );
        assert!(out.lower <= out.upper);
        assert_eq!(out.method, BoundsMethod::PartialIdItt);
        // Complier term alone: share * wald * cc = 0.5 * -0.4 * 0.7 = -0.14.
        let complier = &out.detail[0];
        assert!((complier.lower + 0.14).abs() < 1e-5, "{}", complier.lower);
    }

    #[test]
    fn empirical_probabilities_match_cell_counts() {
        let ds = posthoc_dataset(false);
        let rows: Vec<usize> = (0..ds.n_rows())
            .filter(|&r| ds.trial_label(r) == "h1")
            .collect();
        let p = empirical_stratum_probabilities(&ds, "h1", &rows).unwrap();
        p.validate().unwrap();
        assert!((p.p(1, 1, 1) - 0.3).abs() < 1e-12);
        assert!((p.p(0, 0, 0) - 0.3).abs() < 1e-12);
        // Mixing in target rows is a caller error.
        let all: Vec<usize> = (0..ds.n_rows()).collect();
        assert!(matches!(
            empirical_stratum_probabilities(&ds, "h1", &all),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn fitted_stratum_law_tracks_the_empirical_one() {
        let ds = posthoc_dataset(false);
        let spec = GlmSpec::logit_linear();
        let model = StratumModel::fit(&ds, "h1", &spec, &spec).unwrap();
        let fitted = model.probabilities_at(&[0.0]).unwrap();
        fitted.validate().unwrap();
        let rows: Vec<usize> = (0..ds.n_rows())
            .filter(|&r| ds.trial_label(r) == "h1")
            .collect();
        let empirical = empirical_stratum_probabilities(&ds, "h1", &rows).unwrap();
        for y in [0u8, 1] {
            for d in [0u8, 1] {
                for z in [0u8, 1] {
                    // Outcomes are independent of x by construction, so the
                    // fitted law should sit near the pooled frequencies.
                    assert!(
                        (fitted.p(y, d, z) - empirical.p(y, d, z)).abs() < 0.05,
                        "p({y},{d},{z}): {} vs {}",
                        fitted.p(y, d, z),
                        empirical.p(y, d, z)
                    );
                }
            }
        }
    }

    #[test]
    fn fitted_stratum_law_requires_every_uptake_cell() {
        let ds = posthoc_dataset(true);
        let spec = GlmSpec::logit_linear();
        let err = StratumModel::fit(&ds, "h1", &spec, &spec).unwrap_err();
        assert!(matches!(err, Error::InvalidDistribution(_)), "{err}");
    }

    #[test]
    fn bounds_results_serialize_with_kebab_case_methods() {
        let out = balke_pearl_bounds(perfect_compliance(0.7, 0.4)).unwrap();
        let json = serde_json::to_string(&out).unwrap();
        assert!(json.contains("\"balke-pearl\""));
        assert!(json.contains("\"y(1)\""));
    }
}
