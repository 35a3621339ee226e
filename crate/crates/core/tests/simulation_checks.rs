//! Cross-checks of the synthetic trial generator against hand-computed
//! values and an independent empirical estimate of the oracle truth.

use itt_bridge::data::Role;
use itt_bridge::simulation::{
    conditional_compliance, conditional_itt, gen_scenario, true_itt_oracle, uptake_probability,
    CovariateScenario, EstimatorChoice, OutcomeScenario, ScenarioConfig,
};

fn expit(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

fn cfg(n: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        covariates: CovariateScenario::SharedShiftNormal { c: 0.5 },
        outcome: OutcomeScenario::Linear,
        n,
        replicates: 2,
        seed,
        estimators: vec![EstimatorChoice::RegDesign],
        bootstrap_replicates: 20,
    }
}

/// At the centered covariate point every model reduces to plain intercept
/// arithmetic, frozen here to four decimals as a transcription guard.
#[test]
fn conditional_quantities_at_the_origin_match_hand_arithmetic() {
    let x = vec![0.0; 10];

    let delta_y_h1 = expit(2.6) - expit(1.6);
    let delta_d_h1 = expit(2.0) - expit(-1.0);
    let delta_d_h2 = expit(2.5) - expit(-1.5);
    let wald = delta_y_h1 / delta_d_h1;
    let itt = wald * delta_d_h2;

    let lib_delta_d_h1 = uptake_probability(Role::Historical1, 1, &x)
        - uptake_probability(Role::Historical1, 0, &x);
    assert!((lib_delta_d_h1 - delta_d_h1).abs() < 1e-12);
    assert!((conditional_compliance(&x) - delta_d_h2).abs() < 1e-12);
    assert!((conditional_itt(OutcomeScenario::Linear, &x) - itt).abs() < 1e-12);

    for (value, frozen) in [
        (delta_y_h1, 0.0988),
        (delta_d_h1, 0.6119),
        (delta_d_h2, 0.7417),
        (wald, 0.1615),
        (itt, 0.1198),
    ] {
        assert!(
            (value - frozen).abs() < 5e-4,
            "value {value} drifted from frozen {frozen}"
        );
    }
}

/// The quadrature oracle must agree with a brute-force empirical average of
/// the conditional estimand over freshly generated target covariates drawn
/// from an unrelated random stream.
#[test]
fn truth_oracle_matches_an_independent_empirical_average() {
    let scenario = cfg(100_000, 4242);
    let (truth, truth_se) = true_itt_oracle(&scenario).unwrap();
    assert!(truth.is_finite() && truth > 0.0 && truth < 1.0);
    assert!(truth_se > 0.0 && truth_se < 1e-3);

    let ds = gen_scenario(&scenario, 1).unwrap();
    let target_rows = ds.partition().rows(Role::Target).to_vec();
    assert_eq!(target_rows.len(), 100_000);
    let mut sum = 0.0;
    for &i in &target_rows {
        sum += conditional_itt(scenario.outcome, &ds.covariate_row(i));
    }
    let empirical = sum / target_rows.len() as f64;
    assert!(
        (empirical - truth).abs() < 1.5e-3,
        "empirical {empirical} vs oracle {truth}"
    );
}

/// Repeat calls hit the cache and must reproduce the first answer exactly.
#[test]
fn truth_oracle_is_deterministic_across_calls() {
    let scenario = cfg(500, 7);
    let first = true_itt_oracle(&scenario).unwrap();
    let second = true_itt_oracle(&scenario).unwrap();
    assert_eq!(first.0.to_bits(), second.0.to_bits());
    assert_eq!(first.1.to_bits(), second.1.to_bits());
}
