//! Shared oracle machinery for the integration suites.
//!
//! Two independent reference implementations live here: an exhaustive
//! vertex-enumeration solver for the binary instrumental-variable linear
//! program, and a plain Newton-Raphson penalized-likelihood fitter. Both
//! carry their own dense elimination code and share no numerical path with
//! the library under test, so agreement between the two sides is evidence,
//! not tautology.

#![allow(dead_code)]

use rand::Rng;

use itt_bridge::rng::derive_rng;

/// Latent response types for one binary instrument, treatment, and outcome:
/// four compliance patterns (D(0), D(1)) crossed with four outcome patterns
/// (Y(0), Y(1)).
pub const N_TYPES: usize = 16;

/// (d0, d1, y0, y1) for type index `t = 4 * compliance + outcome`.
pub fn type_behavior(t: usize) -> (u8, u8, u8, u8) {
    let (c, o) = (t / 4, t % 4);
    ((c & 1) as u8, (c >> 1) as u8, (o & 1) as u8, (o >> 1) as u8)
}

/// Observable row index for assignment `z`, treatment `d`, outcome `y`.
fn obs_row(z: u8, d: u8, y: u8) -> usize {
    4 * z as usize + 2 * d as usize + y as usize
}

/// The 8 x 16 incidence matrix mapping type probabilities to the observable
/// law: entry (row(z, d, y), t) is 1 when a type-`t` subject assigned `z`
/// takes `d` and shows `y`.
fn incidence() -> [[f64; N_TYPES]; 8] {
    let mut a = [[0.0; N_TYPES]; 8];
    for (t, column) in (0..N_TYPES).map(|t| (t, type_behavior(t))) {
        let (d0, d1, y0, y1) = column;
        for z in 0..2u8 {
            let d = if z == 0 { d0 } else { d1 };
            let y = if d == 0 { y0 } else { y1 };
            a[obs_row(z, d, y)][t] = 1.0;
        }
    }
    a
}

/// Observable arm-conditional law p_{y,d|z} generated by type weights `q`.
pub fn observables_from_types(q: &[f64; N_TYPES]) -> impl Fn(u8, u8, u8) -> f64 {
    let a = incidence();
    let mut p = [0.0; 8];
    for (row, coeffs) in a.iter().enumerate() {
        p[row] = coeffs.iter().zip(q).map(|(c, w)| c * w).sum();
    }
    move |y, d, z| p[obs_row(z, d, y)]
}

/// A random point of the 16-type simplex (symmetric Dirichlet via
/// normalized exponentials), guaranteeing the observable law it induces is
/// compatible with the instrumental-variable model.
pub fn random_type_weights(seed: u64, index: u64) -> [f64; N_TYPES] {
    let mut rng = derive_rng(seed, "lp-types", index);
    let mut q = [0.0; N_TYPES];
    let mut total = 0.0;
    for v in &mut q {
        *v = -(1.0 - rng.gen::<f64>()).ln();
        total += *v;
    }
    for v in &mut q {
        *v /= total;
    }
    q
}

/// Linear-program extrema over the type polytope.
#[derive(Debug, Clone, Copy)]
pub struct LpEnvelopes {
    /// min/max of E[Y(0)].
    pub ey0: (f64, f64),
    /// min/max of E[Y(1)].
    pub ey1: (f64, f64),
    /// min/max of E[Y(1)] - E[Y(0)] over the same polytope.
    pub effect: (f64, f64),
}

/// Solve the instrumental-variable linear program by brute force: enumerate
/// every candidate basic feasible solution of {q >= 0, A q = p} (supports of
/// size up to 7, the rank of A) and take extrema of the three objectives
/// over the vertices found. Panics if the law is infeasible.
pub fn lp_envelopes(p: impl Fn(u8, u8, u8) -> f64) -> LpEnvelopes {
    let a = incidence();
    let mut b = [0.0; 8];
    for z in 0..2u8 {
        for d in 0..2u8 {
            for y in 0..2u8 {
                b[obs_row(z, d, y)] = p(y, d, z);
            }
        }
    }
    let mut ey0 = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ey1 = (f64::INFINITY, f64::NEG_INFINITY);
    let mut effect = (f64::INFINITY, f64::NEG_INFINITY);
    let mut found = false;

    // All column subsets of size 1..=7, odometer-style.
    for size in 1..=7usize {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            if let Some(q) = solve_support(&a, &b, &subset) {
                found = true;
                let (mut v0, mut v1) = (0.0, 0.0);
                for (&t, &w) in subset.iter().zip(&q) {
                    let (_, _, y0, y1) = type_behavior(t);
                    v0 += f64::from(y0) * w;
                    v1 += f64::from(y1) * w;
                }
                ey0 = (ey0.0.min(v0), ey0.1.max(v0));
                ey1 = (ey1.0.min(v1), ey1.1.max(v1));
                effect = (effect.0.min(v1 - v0), effect.1.max(v1 - v0));
            }
            // Advance the subset odometer; stop once every position is maxed.
            let mut advanced = false;
            for i in (0..size).rev() {
                if subset[i] < N_TYPES - size + i {
                    subset[i] += 1;
                    for j in i + 1..size {
                        subset[j] = subset[j - 1] + 1;
                    }
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                break;
            }
        }
    }
    assert!(found, "no feasible vertex: the observable law violates the IV model");
    LpEnvelopes { ey0, ey1, effect }
}

/// Solve A[:, support] x = b exactly (8 equations, |support| unknowns) by
/// Gaussian elimination, demanding a unique consistent solution with
/// x >= -1e-9. Returns the weights over `support`, or None.
fn solve_support(a: &[[f64; N_TYPES]; 8], b: &[f64; 8], support: &[usize]) -> Option<Vec<f64>> {
    let k = support.len();
    // Augmented 8 x (k + 1) system.
    let mut m = [[0.0f64; 8]; 8];
    for r in 0..8 {
        for (c, &t) in support.iter().enumerate() {
            m[r][c] = a[r][t];
        }
        m[r][k] = b[r];
    }
    // Forward elimination with partial pivoting.
    let mut pivot_rows = Vec::with_capacity(k);
    let mut row = 0usize;
    for col in 0..k {
        let best = (row..8).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[best][col].abs() < 1e-12 {
            // Rank-deficient on this support: solution not unique, so this
            // vertex (if any) is reachable through a smaller support.
            return None;
        }
        m.swap(row, best);
        for r in row + 1..8 {
            let f = m[r][col] / m[row][col];
            if f != 0.0 {
                for c in col..=k {
                    m[r][c] -= f * m[row][c];
                }
            }
        }
        pivot_rows.push(row);
        row += 1;
    }
    // Consistency: the eliminated-out equations must vanish.
    for r in row..8 {
        if m[r][k].abs() > 1e-9 {
            return None;
        }
    }
    // Back substitution.
    let mut x = vec![0.0f64; k];
    for col in (0..k).rev() {
        let r = pivot_rows[col];
        let mut v = m[r][k];
        for c in col + 1..k {
            v -= m[r][c] * x[c];
        }
        x[col] = v / m[r][col];
    }
    if x.iter().any(|&v| !(v >= -1e-9)) {
        return None;
    }
    Some(x)
}

/// Independent penalized-logistic fitter: textbook Newton-Raphson on the
/// ridge-penalized log-likelihood, with its own dense solver. `rows` are
/// already-encoded design rows, so the comparison isolates the optimizer.
pub fn newton_logit(rows: &[Vec<f64>], y: &[f64], ridge: f64) -> Vec<f64> {
    let p = rows[0].len();
    let mut beta = vec![0.0; p];
    for _ in 0..500 {
        let mut grad = vec![0.0; p];
        let mut neg_hess = vec![vec![0.0; p]; p];
        for (row, &yi) in rows.iter().zip(y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            let w = mu * (1.0 - mu);
            for j in 0..p {
                grad[j] += row[j] * (yi - mu);
                for l in 0..p {
                    neg_hess[j][l] += w * row[j] * row[l];
                }
            }
        }
        for j in 0..p {
            grad[j] -= ridge * beta[j];
            neg_hess[j][j] += ridge;
        }
        let step = solve_dense(&neg_hess, &grad);
        let mut sup = 0.0f64;
        for j in 0..p {
            beta[j] += step[j];
            sup = sup.max(step[j].abs());
        }
        if sup < 1e-12 {
            break;
        }
    }
    beta
}

/// Independent ridge least squares: solve (X'X + ridge I) b = X'y directly.
pub fn ridge_least_squares(rows: &[Vec<f64>], y: &[f64], ridge: f64) -> Vec<f64> {
    let p = rows[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &yi) in rows.iter().zip(y) {
        for j in 0..p {
            xty[j] += row[j] * yi;
            for l in 0..p {
                xtx[j][l] += row[j] * row[l];
            }
        }
    }
    for j in 0..p {
        xtx[j][j] += ridge;
    }
    solve_dense(&xtx, &xty)
}

/// Dense symmetric-positive solve by Gaussian elimination with partial
/// pivoting; local to the oracles on purpose.
fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| {
            let mut r = row.clone();
            r.push(rhs);
            r
        })
        .collect();
    for col in 0..n {
        let best = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .expect("nonempty");
        m.swap(col, best);
        assert!(m[col][col].abs() > 1e-14, "singular oracle system");
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut v = m[col][n];
        for c in col + 1..n {
            v -= m[col][c] * x[c];
        }
        x[col] = v / m[col][col];
    }
    x
}

// ---------------------------------------------------------------------------
// Synthetic-law helpers shared by the estimator property suites.
// ---------------------------------------------------------------------------

use itt_bridge::data::{Covariate, Role, RoleConfig, TrialDataset};
use itt_bridge::estimators::{ColumnsFamily, NuisanceColumns};
use itt_bridge::simulation::{
    outcome_probability, uptake_probability, CovariateScenario, EstimatorChoice, OutcomeScenario,
    ScenarioConfig,
};

/// A shared-shift normal scenario with the given overlap separation.
pub fn shared_shift_config(outcome: OutcomeScenario, c: f64, n: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        covariates: CovariateScenario::SharedShiftNormal { c },
        outcome,
        n,
        replicates: 2,
        seed,
        estimators: vec![EstimatorChoice::RegDesign],
        bootstrap_replicates: 20,
    }
}

/// Exact trial-membership probabilities for equal-sized trials under the
/// shared-shift normal law: the three shifted coordinates' squared distances
/// to each trial's location are a sufficient statistic, everything else
/// cancels.
pub fn true_participation(c: f64, x: &[f64]) -> (f64, f64, f64) {
    let shifts = [1.2 * c, c, 0.8 * c];
    let mut w = [0.0f64; 3];
    for (k, shift) in shifts.iter().enumerate() {
        let mut ss = 0.0;
        for xj in &x[..3] {
            ss += (xj - shift) * (xj - shift);
        }
        // Coordinate variance is 1/2, so 2 sigma^2 = 1 in the exponent.
        w[k] = (-ss).exp();
    }
    let total = w[0] + w[1] + w[2];
    (w[0] / total, w[1] / total, w[2] / total)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Which nuisance to corrupt when building oracle columns, mirroring the
/// influence-function estimator's robustness cases.
#[derive(Clone, Copy, PartialEq)]
pub enum Corruption {
    None,
    /// Trial-participation probabilities replaced by flat thirds.
    Participation,
    /// Second-trial treatment law replaced by the first trial's.
    ComplianceLaw,
    /// Historical outcome means shifted on the logit scale.
    OutcomeLaw,
}

/// Build the estimator's nuisance columns from the data-generating law
/// itself, optionally corrupting one component.
pub fn oracle_columns(
    ds: &TrialDataset,
    outcome: OutcomeScenario,
    c: f64,
    corruption: Corruption,
) -> NuisanceColumns {
    let n = ds.n_rows();
    let mut cols = NuisanceColumns::empty(ColumnsFamily::Design { collapsed: false }, n);
    cols.mu_d0_h2 = vec![f64::NAN; n];
    cols.p_t = vec![f64::NAN; n];
    cols.p_h1 = vec![f64::NAN; n];
    cols.p_h2 = vec![f64::NAN; n];
    cols.f_z = vec![0.5; n];
    for i in 0..n {
        let x = ds.covariate_row(i);
        let mut mu_y1 = outcome_probability(outcome, Role::Historical1, 1, &x);
        let mut mu_y0 = outcome_probability(outcome, Role::Historical1, 0, &x);
        if corruption == Corruption::OutcomeLaw {
            mu_y1 = expit(logit(mu_y1) - 0.5);
            mu_y0 = expit(logit(mu_y0) + 0.8);
        }
        let d1_h1 = uptake_probability(Role::Historical1, 1, &x);
        let d0_h1 = uptake_probability(Role::Historical1, 0, &x);
        let delta_d_h1 = d1_h1 - d0_h1;
        let (cc, mu_d0_h2) = if corruption == Corruption::ComplianceLaw {
            (delta_d_h1, d0_h1)
        } else {
            let d1 = uptake_probability(Role::Historical2, 1, &x);
            let d0 = uptake_probability(Role::Historical2, 0, &x);
            (d1 - d0, d0)
        };
        let (p_h1, p_h2, p_t) = if corruption == Corruption::Participation {
            (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
        } else {
            true_participation(c, &x)
        };
        cols.include[i] = delta_d_h1.abs() >= 1e-3;
        cols.delta_y_h1[i] = mu_y1 - mu_y0;
        cols.delta_d_h1[i] = delta_d_h1;
        cols.wald[i] = (mu_y1 - mu_y0) / delta_d_h1;
        cols.mu_y0_h1[i] = mu_y0;
        cols.mu_d0_h1[i] = d0_h1;
        cols.cc[i] = cc;
        cols.mu_d0_h2[i] = mu_d0_h2;
        cols.p_t[i] = p_t;
        cols.p_h1[i] = p_h1;
        cols.p_h2[i] = p_h2;
    }
    cols
}

/// The same rows with the historical-2 trial dropped and no distinct
/// historical-2 role configured, so the role partition collapses.
pub fn collapse_h2(src: &TrialDataset) -> TrialDataset {
    let keep: Vec<usize> = (0..src.n_rows())
        .filter(|&i| src.role_of_row(i) != Role::Historical2)
        .collect();
    let names = src.covariate_names().to_vec();
    let columns = (0..names.len())
        .map(|j| Covariate::Continuous(keep.iter().map(|&i| src.covariate_row(i)[j]).collect()))
        .collect();
    TrialDataset::from_parts(
        RoleConfig::new("t", "h1", None),
        names,
        columns,
        keep.iter().map(|&i| src.z(i)).collect(),
        keep.iter().map(|&i| src.d(i)).collect(),
        keep.iter().map(|&i| src.y(i)).collect(),
        keep.iter().map(|&i| src.trial_label(i).to_string()).collect(),
    )
    .unwrap()
}
