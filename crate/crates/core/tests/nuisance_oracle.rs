//! Conditional-mean fits against an independent Newton-Raphson oracle.
//!
//! The library fits cells by iteratively reweighted least squares with a
//! ridge penalty; the oracle optimizes the same penalized objective with
//! plain Newton steps and its own dense solver. Agreement on the coefficient
//! vector validates the solver end to end, on both the linear and the
//! spline design bases.

mod support;

use itt_bridge::data::Role;
use itt_bridge::nuisance::{
    cell_rows, fit_glm, Basis, DesignLayout, Endpoint, GlmSpec, Link, RIDGE_ESCALATED,
};
use itt_bridge::simulation::{
    gen_scenario, CovariateScenario, EstimatorChoice, OutcomeScenario, ScenarioConfig,
};

use support::{newton_logit, ridge_least_squares};

fn scenario(n: usize, seed: u64) -> itt_bridge::data::TrialDataset {
    let cfg = ScenarioConfig {
        covariates: CovariateScenario::SharedShiftNormal { c: 0.3 },
        outcome: OutcomeScenario::Linear,
        n,
        replicates: 2,
        seed,
        estimators: vec![EstimatorChoice::RegDesign],
        bootstrap_replicates: 20,
    };
    gen_scenario(&cfg, 0).unwrap()
}

/// Encoded design rows and responses for one (trial, arm, endpoint) cell.
fn cell_inputs(
    ds: &itt_bridge::data::TrialDataset,
    spec: &GlmSpec,
    trial: &str,
    arm: u8,
    endpoint: Endpoint,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let layout = DesignLayout::from_dataset(ds, spec);
    let dm = layout.matrix(ds);
    let rows = cell_rows(ds, trial, arm).unwrap();
    let x: Vec<Vec<f64>> = rows.iter().map(|&i| dm.row(i).to_vec()).collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|&i| {
            f64::from(match endpoint {
                Endpoint::Y => ds.y(i).unwrap(),
                Endpoint::D => ds.d(i).unwrap(),
            })
        })
        .collect();
    (x, y)
}

#[test]
fn logit_linear_fit_matches_newton_raphson() {
    let ds = scenario(600, 41);
    let spec = GlmSpec::new(Link::Logit, Basis::Linear);
    for (trial, arm, endpoint) in [
        ("h1", 1u8, Endpoint::Y),
        ("h1", 0u8, Endpoint::Y),
        ("h2", 1u8, Endpoint::D),
        ("t", 0u8, Endpoint::D),
    ] {
        let model = fit_glm(&ds, trial, arm, endpoint, &spec).unwrap();
        assert!(!model.convergence.separation_detected);
        let (x, y) = cell_inputs(&ds, &spec, trial, arm, endpoint);
        let oracle = newton_logit(&x, &y, model.convergence.ridge_used);
        assert_eq!(model.coefficients.len(), oracle.len());
        for (j, (a, b)) in model.coefficients.iter().zip(&oracle).enumerate() {
            assert!(
                (a - b).abs() < 1e-6,
                "{trial}/z={arm}/{endpoint:?} coefficient {j}: {a} vs oracle {b}"
            );
        }
    }
}

#[test]
fn logit_spline_fit_matches_newton_raphson() {
    let ds = scenario(500, 42);
    let spec = GlmSpec::new(Link::Logit, Basis::Spline { interior_knots: 4 });
    let model = fit_glm(&ds, "h1", 1, Endpoint::Y, &spec).unwrap();
    let (x, y) = cell_inputs(&ds, &spec, "h1", 1, Endpoint::Y);
    assert!(x[0].len() > 11, "spline basis should widen the design");
    let oracle = newton_logit(&x, &y, model.convergence.ridge_used);
    for (j, (a, b)) in model.coefficients.iter().zip(&oracle).enumerate() {
        assert!(
            (a - b).abs() < 1e-6,
            "spline coefficient {j}: {a} vs oracle {b}"
        );
    }
}

#[test]
fn identity_link_fit_matches_ridge_least_squares() {
    let ds = scenario(500, 43);
    let spec = GlmSpec::new(Link::Identity, Basis::Linear);
    let model = fit_glm(&ds, "h2", 1, Endpoint::D, &spec).unwrap();
    let (x, y) = cell_inputs(&ds, &spec, "h2", 1, Endpoint::D);
    let oracle = ridge_least_squares(&x, &y, model.convergence.ridge_used);
    for (j, (a, b)) in model.coefficients.iter().zip(&oracle).enumerate() {
        assert!(
            (a - b).abs() < 1e-6,
            "identity coefficient {j}: {a} vs oracle {b}"
        );
    }
}

#[test]
fn separated_cells_escalate_the_ridge_and_still_match_the_oracle() {
    // Overwrite h1's placebo-arm outcomes with a perfect classifier of the
    // first covariate to force separation in that cell.
    let src = scenario(300, 44);
    let n = src.n_rows();
    let mut y: Vec<Option<u8>> = (0..n).map(|i| src.y(i)).collect();
    for i in 0..n {
        if src.role_of_row(i) == Role::Historical1 && src.z(i) == Some(0) {
            y[i] = Some(u8::from(src.covariate_row(i)[0] > 0.0));
        }
    }
    let names = src.covariate_names().to_vec();
    let columns = (0..names.len())
        .map(|j| {
            itt_bridge::data::Covariate::Continuous(
                (0..n).map(|i| src.covariate_row(i)[j]).collect(),
            )
        })
        .collect();
    let ds = itt_bridge::data::TrialDataset::from_parts(
        itt_bridge::data::RoleConfig::new("t", "h1", Some("h2")),
        names,
        columns,
        (0..n).map(|i| src.z(i)).collect(),
        (0..n).map(|i| src.d(i)).collect(),
        y,
        (0..n).map(|i| src.trial_label(i).to_string()).collect(),
    )
    .unwrap();

    let spec = GlmSpec::new(Link::Logit, Basis::Linear);
    let model = fit_glm(&ds, "h1", 0, Endpoint::Y, &spec).unwrap();
    assert!(model.convergence.separation_detected);
    assert_eq!(model.convergence.ridge_used, RIDGE_ESCALATED);
    let (x, yy) = cell_inputs(&ds, &spec, "h1", 0, Endpoint::Y);
    let oracle = newton_logit(&x, &yy, RIDGE_ESCALATED);
    for (j, (a, b)) in model.coefficients.iter().zip(&oracle).enumerate() {
        assert!(
            (a - b).abs() < 1e-6,
            "escalated coefficient {j}: {a} vs oracle {b}"
        );
    }
}
