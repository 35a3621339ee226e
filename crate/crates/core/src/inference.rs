//! Uncertainty quantification: stratified bootstrap, influence-function
//! variance, and cross-fitting orchestration.
//!
//! Everything here is deterministic given `(seed, replicates, data)`:
//! replicate streams come from [`crate::rng::derive_rng`] and parallel
//! reductions collect in index order, so thread count never changes a CI.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::estimators::EstimateResult;
use crate::rng::derive_rng;

/// Two-sided 97.5% standard-normal quantile, for 95% Wald intervals.
const Z_975: f64 = 1.959_963_984_540_054;

/// Nonparametric bootstrap settings. Resampling is stratified: each
/// replicate redraws rows with replacement within every trial label, so
/// per-trial sample sizes never change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(replicates: usize, seed: u64) -> Result<Self> {
        let cfg = BootstrapConfig { replicates, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidConfig(format!(
                "bootstrap needs at least 2 replicates, got {}",
                self.replicates
            )));
        }
        Ok(())
    }
}

/// Cross-fitting layout: `k` folds assigned from `seed`. `k = 1` means no
/// splitting (full-sample fits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossfitPlan {
    pub k: usize,
    pub seed: u64,
}

impl CrossfitPlan {
    /// No cross-fitting.
    pub fn none() -> Self {
        CrossfitPlan { k: 1, seed: 0 }
    }

    pub fn new(k: usize, seed: u64) -> Result<Self> {
        let plan = CrossfitPlan { k, seed };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig(
                "cross-fitting needs at least 1 fold".into(),
            ));
        }
        Ok(())
    }

    /// Per-row fold labels in `0..k`. Rows are stratified by (trial, arm),
    /// shuffled on a stream derived from the seed, and dealt round-robin, so
    /// folds partition each trial's rows as evenly as possible.
    pub fn assign(&self, ds: &TrialDataset) -> Result<Vec<usize>> {
        self.validate()?;
        let n = ds.n_rows();
        let mut fold = vec![0usize; n];
        if self.k == 1 {
            return Ok(fold);
        }
        let mut stratum = 0u64;
        for label in ds.trial_labels() {
            for arm in [None, Some(0u8), Some(1u8)] {
                let mut rows: Vec<usize> = (0..n)
                    .filter(|&i| ds.trial_label(i) == label && ds.z(i) == arm)
                    .collect();
                if !rows.is_empty() {
                    let mut rng = derive_rng(self.seed, "crossfit", stratum);
                    rows.shuffle(&mut rng);
                    for (pos, &i) in rows.iter().enumerate() {
                        fold[i] = pos % self.k;
                    }
                }
                stratum += 1;
            }
        }
        Ok(fold)
    }
}

/// A missing (trial, arm) cell inside a fold's training complement is a
/// fold-design problem, not a data defect; rewrap it so callers see which
/// fold broke. `arm: "any"` marks a trial absent from the complement
/// entirely.
pub(crate) fn fold_error(e: Error, fold: usize) -> Error {
    match e {
        Error::MissingArm { trial, arm } => Error::EmptyCellInFold {
            fold,
            trial,
            arm: arm.to_string(),
        },
        Error::EmptyRole(label) => Error::EmptyCellInFold {
            fold,
            trial: label,
            arm: "any".to_string(),
        },
        other => other,
    }
}

/// Fit a component set per fold: `fit` receives each fold's training rows
/// (the complement of the fold) and the returned assignment maps every row
/// to the fold whose model must predict it. `k = 1` degenerates to a single
/// full-sample fit.
pub fn cross_fit<T, F>(
    plan: &CrossfitPlan,
    ds: &TrialDataset,
    fit: F,
) -> Result<(Vec<usize>, Vec<T>)>
where
    F: Fn(&[usize]) -> Result<T>,
{
    plan.validate()?;
    let n = ds.n_rows();
    if plan.k == 1 {
        let all: Vec<usize> = (0..n).collect();
        return Ok((vec![0; n], vec![fit(&all)?]));
    }
    let fold_of = plan.assign(ds)?;
    let mut fits = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        fits.push(fit(&train).map_err(|e| fold_error(e, fold))?);
    }
    Ok((fold_of, fits))
}

/// Standard-error and 95% Wald interval from per-row influence values
/// (already centered: their mean is zero at the plug-in estimate). Variance
/// is the mean squared value over the pooled sample; SE = √(Var/n).
pub fn eif_variance_ci(eif_values: &[f64], point: f64) -> Result<(f64, (f64, f64))> {
    if eif_values.is_empty() {
        return Err(Error::DegenerateVariance);
    }
    let n = eif_values.len() as f64;
    let var = eif_values.iter().map(|e| e * e).sum::<f64>() / n;
    if !var.is_finite() {
        return Err(Error::NonFinite("influence-function variance".into()));
    }
    if var <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let se = (var / n).sqrt();
    Ok((se, (point - Z_975 * se, point + Z_975 * se)))
}

/// Row indices per trial label, in label order; the strata resampled by the
/// bootstrap.
fn trial_strata(ds: &TrialDataset) -> Vec<Vec<usize>> {
    ds.trial_labels()
        .iter()
        .map(|label| {
            (0..ds.n_rows())
                .filter(|&i| ds.trial_label(i) == label)
                .collect()
        })
        .collect()
}

fn resample(strata: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let total: usize = strata.iter().map(Vec::len).sum();
    let mut rows = Vec::with_capacity(total);
    for s in strata {
        for _ in 0..s.len() {
            rows.push(s[rng.gen_range(0..s.len())]);
        }
    }
    rows
}

/// Run the estimator closure on every bootstrap replicate's row multiset and
/// collect the successful outputs (vectors so one closure can produce several
/// estimators' values per replicate). Errors on more than 10% of replicates
/// abort with [`Error::TooManyFailures`]; below that they are dropped and
/// counted by the caller via the returned length.
pub fn bootstrap_replicates<F>(
    ds: &TrialDataset,
    cfg: &BootstrapConfig,
    estimator: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    cfg.validate()?;
    let strata = trial_strata(ds);
    let results: Vec<Result<Vec<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = derive_rng(cfg.seed, "bootstrap", r as u64);
            let rows = resample(&strata, &mut rng);
            estimator(&rows)
        })
        .collect();
    let total = results.len();
    let ok: Vec<Vec<f64>> = results.into_iter().filter_map(std::result::Result::ok).collect();
    let failed = total - ok.len();
    if failed * 10 > total {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok(ok)
}

/// Percentile interval at level `1 − alpha` (linear-interpolation quantiles).
/// Always contains the sample median.
pub fn percentile_interval(values: &[f64], alpha: f64) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    (
        quantile_sorted(&sorted, alpha / 2.0),
        quantile_sorted(&sorted, 1.0 - alpha / 2.0),
    )
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Sample standard deviation (n − 1 denominator); 0 for constant input.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (ss / (n - 1) as f64).sqrt()
}

/// Bootstrap CI for one estimator: the full-data estimate in `base` keeps
/// its point and diagnostics, gaining a percentile CI, a bootstrap SE, and
/// the resampling seed. Identical `(seed, replicates, data)` give an
/// identical interval.
pub fn bootstrap_ci<F>(
    ds: &TrialDataset,
    cfg: &BootstrapConfig,
    base: &EstimateResult,
    estimator: F,
) -> Result<EstimateResult>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    let outputs = bootstrap_replicates(ds, cfg, |rows| estimator(rows).map(|v| vec![v]))?;
    let values: Vec<f64> = outputs.into_iter().map(|v| v[0]).collect();
    let (lo, hi) = percentile_interval(&values, 0.05);
    let mut out = base.clone();
    out.standard_error = Some(sample_std(&values));
    out.attach_ci(lo, hi, "bootstrap-percentile");
    out.diagnostics.seed = Some(cfg.seed);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariate, RoleConfig};
    use crate::estimators::{Diagnostics, Method, NuisanceSpecs};

    fn toy_dataset(n_h1: usize, n_t: usize) -> TrialDataset {
        let n = n_h1 + n_t;
        let mut x = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut trial = Vec::with_capacity(n);
        for i in 0..n {
            let h1 = i < n_h1;
            x.push(i as f64);
            z.push(Some((i % 2) as u8));
            d.push(Some((i % 2) as u8));
            y.push(if h1 { Some(((i / 2) % 2) as u8) } else { None });
            trial.push(if h1 { "h1".to_string() } else { "t".to_string() });
        }
        TrialDataset::from_parts(
            RoleConfig::new("t", "h1", None),
            vec!["x1".into()],
            vec![Covariate::Continuous(x)],
            z,
            d,
            y,
            trial,
        )
        .unwrap()
    }

    fn dummy_result(point: f64) -> EstimateResult {
        EstimateResult {
            estimand: "itt".into(),
            method: Method::RegDesign,
            point,
            standard_error: None,
            ci: None,
            ci_method: None,
            diagnostics: Diagnostics {
                clamp_count: 0,
                denominator_floor_count: 0,
                prediction_floor_count: 0,
                n_target_rows: 0,
                n_target_rows_used: 0,
                nuisance_specs: NuisanceSpecs::logit_linear(),
                seed: None,
                crossfit_folds: None,
                non_overlap_trials: Vec::new(),
                separation_detected: false,
            },
        }
    }

    #[test]
    fn constant_estimator_gives_degenerate_interval() {
        let ds = toy_dataset(8, 4);
        let cfg = BootstrapConfig::new(50, 9).unwrap();
        let out = bootstrap_ci(&ds, &cfg, &dummy_result(0.3), |_| Ok(0.3)).unwrap();
        assert_eq!(out.ci, Some((0.3, 0.3)));
        // Summing fifty copies of 0.3 leaves rounding dust in the mean, so
        // the standard deviation is tiny rather than exactly zero.
        assert!(out.standard_error.unwrap().abs() < 1e-12);
        assert_eq!(out.ci_method.as_deref(), Some("bootstrap-percentile"));
    }

    #[test]
    fn same_seed_same_interval_and_point_preserved() {
        let ds = toy_dataset(40, 20);
        let cfg = BootstrapConfig::new(200, 77).unwrap();
        // Estimator: mean row index of the resample (depends on the draw).
        let f = |rows: &[usize]| Ok(rows.iter().sum::<usize>() as f64 / rows.len() as f64);
        let base = dummy_result(29.5);
        let a = bootstrap_ci(&ds, &cfg, &base, f).unwrap();
        let b = bootstrap_ci(&ds, &cfg, &base, f).unwrap();
        assert_eq!(a.ci, b.ci);
        assert_eq!(a.point, 29.5);
        let (lo, hi) = a.ci.unwrap();
        assert!(lo <= 29.5 && 29.5 <= hi);
    }

    #[test]
    fn resamples_preserve_per_trial_counts() {
        let ds = toy_dataset(30, 10);
        let strata = trial_strata(&ds);
        let mut rng = derive_rng(5, "bootstrap", 0);
        let rows = resample(&strata, &mut rng);
        assert_eq!(rows.len(), 40);
        let h1 = rows
            .iter()
            .filter(|&&i| ds.trial_label(i) == "h1")
            .count();
        assert_eq!(h1, 30);
        // A multiset, not a permutation: some index should repeat.
        let mut sorted = rows.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert!(sorted.len() < 40);
    }

    #[test]
    fn failure_threshold_is_ten_percent() {
        let ds = toy_dataset(8, 4);
        let cfg = BootstrapConfig::new(100, 1).unwrap();
        // Every replicate fails: hard error.
        let err = bootstrap_replicates(&ds, &cfg, |_| -> Result<Vec<f64>> {
            Err(Error::AllStrataDegenerate)
        })
        .unwrap_err();
        assert!(matches!(
            err,
            Error::TooManyFailures {
                failed: 100,
                total: 100
            }
        ));
        // No replicate fails: full output.
        let values = bootstrap_replicates(&ds, &cfg, |_| Ok(vec![1.0])).unwrap();
        assert_eq!(values.len(), 100);
        assert!(BootstrapConfig::new(1, 0).is_err());
    }

    #[test]
    fn percentile_interval_contains_median() {
        let values: Vec<f64> = (0..101).map(|i| f64::from(i) / 100.0).collect();
        let (lo, hi) = percentile_interval(&values, 0.05);
        assert!((lo - 0.025).abs() < 1e-12);
        assert!((hi - 0.975).abs() < 1e-12);
        let median = 0.5;
        assert!(lo <= median && median <= hi);
    }

    #[test]
    fn eif_variance_matches_formula_and_scales() {
        let values = vec![1.0, -1.0, 1.0, -1.0];
        let (se, (lo, hi)) = eif_variance_ci(&values, 0.0).unwrap();
        assert!((se - 0.5).abs() < 1e-12);
        assert!((hi - Z_975 * 0.5).abs() < 1e-12);
        assert!((lo + Z_975 * 0.5).abs() < 1e-12);
        // Doubling the data shrinks SE by exactly 1/√2.
        let doubled: Vec<f64> = values.iter().chain(values.iter()).copied().collect();
        let (se2, _) = eif_variance_ci(&doubled, 0.0).unwrap();
        assert!((se2 - se / 2.0_f64.sqrt()).abs() < 1e-6);
        // All-zero influence values are degenerate.
        assert!(matches!(
            eif_variance_ci(&[0.0, 0.0], 0.1),
            Err(Error::DegenerateVariance)
        ));
    }

    #[test]
    fn crossfit_assignment_partitions_each_trial() {
        let ds = toy_dataset(40, 20);
        let plan = CrossfitPlan::new(5, 3).unwrap();
        let fold = plan.assign(&ds).unwrap();
        assert_eq!(fold.len(), 60);
        for f in &fold {
            assert!(*f < 5);
        }
        // Stratified: each (trial, arm) cell spreads across folds evenly.
        for label in ["h1", "t"] {
            for arm in [0u8, 1u8] {
                let mut counts = [0usize; 5];
                for i in 0..60 {
                    if ds.trial_label(i) == label && ds.z(i) == Some(arm) {
                        counts[fold[i]] += 1;
                    }
                }
                let total: usize = counts.iter().sum();
                for c in counts {
                    assert!(c >= total / 5);
                    assert!(c <= total / 5 + 1);
                }
            }
        }
        // Same seed, same assignment; different seed differs somewhere.
        assert_eq!(fold, plan.assign(&ds).unwrap());
        let other = CrossfitPlan::new(5, 4).unwrap().assign(&ds).unwrap();
        assert_ne!(fold, other);
    }

    #[test]
    fn cross_fit_trains_on_complement() {
        let ds = toy_dataset(40, 20);
        let plan = CrossfitPlan::new(2, 11).unwrap();
        let (fold_of, fits) = cross_fit(&plan, &ds, |train| Ok(train.to_vec())).unwrap();
        assert_eq!(fits.len(), 2);
        for (fold, train) in fits.iter().enumerate() {
            for &i in train {
                assert_ne!(fold_of[i], fold, "row {i} trained its own fold");
            }
            // Complement covers everything outside the fold.
            let expected = fold_of.iter().filter(|&&f| f != fold).count();
            assert_eq!(train.len(), expected);
        }

        // K=1: a single fit on all rows.
        let (fold_of, fits) = cross_fit(&CrossfitPlan::none(), &ds, |t| Ok(t.len())).unwrap();
        assert_eq!(fits, vec![60]);
        assert!(fold_of.iter().all(|&f| f == 0));
    }

    #[test]
    fn empty_cell_in_fold_is_reported_with_fold_index() {
        let ds = toy_dataset(40, 20);
        let plan = CrossfitPlan::new(2, 1).unwrap();
        let err = cross_fit(&plan, &ds, |train| -> Result<()> {
            // Simulate a fit that needs a cell the complement lost.
            if train.len() < 40 {
                Err(Error::MissingArm {
                    trial: "h1".into(),
                    arm: 1,
                })
            } else {
                Err(Error::EmptyRole("t".into()))
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::EmptyCellInFold { fold: 0, .. }));
    }
}
