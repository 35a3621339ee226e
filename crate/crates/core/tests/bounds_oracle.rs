//! Bounds against independent oracles: the Balke-Pearl envelopes must equal
//! the brute-force linear-program solution on exactly representable laws,
//! and the mean-restriction bounds must match their defining arithmetic.

mod support;

use itt_bridge::bounds::{
    balke_pearl_bounds, manski_pepper_bounds, BoundsMethod, OutcomeBounds, StratumProbabilities,
};
use itt_bridge::Error;

use support::{lp_envelopes, observables_from_types, random_type_weights, type_behavior};

const LP_TOL: f64 = 1e-9;

#[test]
fn balke_pearl_equals_the_lp_oracle_on_fifty_random_laws() {
    for i in 0..50u64 {
        let q = random_type_weights(2024, i);
        let p = observables_from_types(&q);
        let result = balke_pearl_bounds(StratumProbabilities::from_fn(&p))
            .unwrap_or_else(|e| panic!("law {i} should be feasible: {e}"));
        let oracle = lp_envelopes(&p);

        let y0 = result
            .detail
            .iter()
            .find(|s| s.label == "y(0)")
            .expect("y(0) envelope");
        let y1 = result
            .detail
            .iter()
            .find(|s| s.label == "y(1)")
            .expect("y(1) envelope");
        assert!(
            (y0.lower - oracle.ey0.0).abs() <= LP_TOL,
            "law {i}: E[Y(0)] lower {} vs LP {}",
            y0.lower,
            oracle.ey0.0
        );
        assert!(
            (y0.upper - oracle.ey0.1).abs() <= LP_TOL,
            "law {i}: E[Y(0)] upper {} vs LP {}",
            y0.upper,
            oracle.ey0.1
        );
        assert!(
            (y1.lower - oracle.ey1.0).abs() <= LP_TOL,
            "law {i}: E[Y(1)] lower {} vs LP {}",
            y1.lower,
            oracle.ey1.0
        );
        assert!(
            (y1.upper - oracle.ey1.1).abs() <= LP_TOL,
            "law {i}: E[Y(1)] upper {} vs LP {}",
            y1.upper,
            oracle.ey1.1
        );

        // The published effect interval is the difference of the marginal
        // envelopes, an outer bound on the joint LP effect range.
        assert_eq!(result.method, BoundsMethod::BalkePearl);
        assert!((result.lower - (y1.lower - y0.upper)).abs() <= 1e-15);
        assert!((result.upper - (y1.upper - y0.lower)).abs() <= 1e-15);
        assert!(result.lower <= oracle.effect.0 + LP_TOL);
        assert!(result.upper >= oracle.effect.1 - LP_TOL);
    }
}

#[test]
fn balke_pearl_identifies_points_under_perfect_compliance() {
    // Pure compliers: D = Z, so each potential-outcome mean is identified
    // and both envelopes must collapse to the observable arm means.
    let mut q = [0.0f64; 16];
    let weights = [0.15, 0.35, 0.1, 0.4]; // over (y0, y1) patterns
    for t in 0..16 {
        let (d0, d1, _, _) = type_behavior(t);
        if (d0, d1) == (0, 1) {
            q[t] = weights[t % 4];
        }
    }
    let p = observables_from_types(&q);
    let result = balke_pearl_bounds(StratumProbabilities::from_fn(&p)).unwrap();
    let ey0_true: f64 = (0..16)
        .map(|t| {
            let (_, _, y0, _) = type_behavior(t);
            q[t] * f64::from(y0)
        })
        .sum();
    let ey1_true: f64 = (0..16)
        .map(|t| {
            let (_, _, _, y1) = type_behavior(t);
            q[t] * f64::from(y1)
        })
        .sum();
    for s in &result.detail {
        assert!(s.upper - s.lower <= 1e-12, "{} did not collapse", s.label);
    }
    assert!((result.lower - (ey1_true - ey0_true)).abs() <= 1e-12);
    assert!((result.upper - (ey1_true - ey0_true)).abs() <= 1e-12);
}

#[test]
fn balke_pearl_envelopes_are_ordered_and_in_range_under_fuzz() {
    for i in 0..200u64 {
        let q = random_type_weights(77, i);
        let p = observables_from_types(&q);
        let result = balke_pearl_bounds(StratumProbabilities::from_fn(&p)).unwrap();
        for s in &result.detail {
            assert!(s.lower <= s.upper + 1e-12);
            assert!(s.lower >= -1e-12 && s.upper <= 1.0 + 1e-12);
        }
        assert!(result.lower <= result.upper);
        assert!(result.lower >= -1.0 - 1e-12 && result.upper <= 1.0 + 1e-12);

        // The truth generated by the type weights must lie inside.
        let effect: f64 = (0..16)
            .map(|t| {
                let (_, _, y0, y1) = type_behavior(t);
                q[t] * (f64::from(y1) - f64::from(y0))
            })
            .sum();
        assert!(result.lower <= effect + 1e-9 && effect <= result.upper + 1e-9);
    }
}

#[test]
fn balke_pearl_rejects_laws_that_contradict_the_iv_model() {
    // Z = 0 subjects reveal E[Y(0)] mass 0.9 on responders among d = 0, but
    // Z = 1 subjects show 0.9 mass of d = 0 non-responders: no single
    // potential-outcome law can generate both arms.
    let p = StratumProbabilities::from_fn(|y, d, z| match (y, d, z) {
        (1, 0, 0) => 0.9,
        (0, 0, 0) => 0.1,
        (0, 0, 1) => 0.9,
        (1, 1, 1) => 0.1,
        _ => 0.0,
    });
    let err = balke_pearl_bounds(p).unwrap_err();
    assert!(matches!(err, Error::InvalidDistribution(_)));
}

#[test]
fn manski_pepper_matches_its_defining_arithmetic() {
    let cell_means = [0.3, 0.7];
    let p_d = [0.4, 0.8];
    let pi = [0.45, 0.55];
    let k = OutcomeBounds::new(-0.25, 1.5).unwrap();
    let result = manski_pepper_bounds(cell_means, p_d, pi, k, 1).unwrap();

    // psi(z; K) = mean * p + K * (1 - p), averaged over the z margin.
    let psi = |kk: f64| -> f64 {
        pi[0] * (cell_means[0] * p_d[0] + kk * (1.0 - p_d[0]))
            + pi[1] * (cell_means[1] * p_d[1] + kk * (1.0 - p_d[1]))
    };
    assert!((result.lower - psi(-0.25)).abs() <= 1e-12);
    assert!((result.upper - psi(1.5)).abs() <= 1e-12);
    assert_eq!(result.method, BoundsMethod::ManskiPepper);

    // Width identity: (k1 - k0) * average unidentified mass.
    let width = (1.5 + 0.25) * (pi[0] * (1.0 - p_d[0]) + pi[1] * (1.0 - p_d[1]));
    assert!(((result.upper - result.lower) - width).abs() <= 1e-12);

    // Per-stratum detail carries one envelope per assignment arm.
    assert_eq!(result.detail.len(), 2);
    assert_eq!(result.detail[0].label, "z=0");
    assert_eq!(result.detail[1].label, "z=1");
}

#[test]
fn manski_pepper_zeroes_the_identified_term_when_no_one_takes_the_level() {
    // p = 0 in one arm: the observable cell is empty, so only the bracket
    // [k0, k1] contributes there and the cell mean is ignored.
    let k = OutcomeBounds::new(0.0, 1.0).unwrap();
    let result = manski_pepper_bounds([0.0, 0.6], [0.0, 0.5], [0.5, 0.5], k, 1).unwrap();
    let lower = 0.5 * (0.0 + 0.0 * 1.0) + 0.5 * (0.6 * 0.5 + 0.0 * 0.5);
    let upper = 0.5 * 1.0 + 0.5 * (0.6 * 0.5 + 1.0 * 0.5);
    assert!((result.lower - lower).abs() <= 1e-12);
    assert!((result.upper - upper).abs() <= 1e-12);
}

#[test]
fn manski_pepper_collapses_to_a_point_under_full_compliance() {
    let k = OutcomeBounds::new(0.0, 1.0).unwrap();
    let result = manski_pepper_bounds([0.32, 0.54], [1.0, 1.0], [0.4, 0.6], k, 1).unwrap();
    let mean = 0.4 * 0.32 + 0.6 * 0.54;
    assert!((result.lower - mean).abs() <= 1e-12);
    assert!((result.upper - mean).abs() <= 1e-12);
}

#[test]
fn manski_pepper_bounds_widen_with_the_outcome_bracket() {
    let narrow = OutcomeBounds::new(0.2, 0.8).unwrap();
    let wide = OutcomeBounds::new(0.0, 1.0).unwrap();
    let a = manski_pepper_bounds([0.3, 0.7], [0.4, 0.8], [0.5, 0.5], narrow, 1).unwrap();
    let b = manski_pepper_bounds([0.3, 0.7], [0.4, 0.8], [0.5, 0.5], wide, 1).unwrap();
    assert!(b.lower <= a.lower + 1e-15);
    assert!(b.upper >= a.upper - 1e-15);
    assert!(b.upper - b.lower > a.upper - a.lower);
}
