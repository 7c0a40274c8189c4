use bayes_concepts_core::oracle::{
    analytic_j_moments, gaussian_moment, j_term_value, proportionality_error, proposition1_check, solve_concept_regression,
    theorem1_closed_form, theorem1_monomial_check, theorem2_mc_check, theorem3_ratio_check, theorem5_bound_check,
    theorem5_construct, ConceptRegressionProblem, ConceptStats, TaylorTermSpec,
};
use bayes_concepts_core::rng;
use proptest::prelude::*;

const MILLION: usize = 1_000_000;

#[test]
fn j_term_at_zero_noise_and_half_tau() {
    let s = TaylorTermSpec::new(vec![1, 1, 0], vec![1.0, -1.0, 1.0], 0.5).unwrap();
    assert_eq!(j_term_value(&s, &[0.0; 3]), Some(1.0));
    // (1 + 0.25/0.5)(1 - 0.25/0.5)
    assert_eq!(j_term_value(&s, &[0.25, 0.25, 9.0]), Some(0.75));
}

#[test]
fn j_term_mean_matches_the_product_of_factor_moments() {
    let s = TaylorTermSpec::new(vec![2, 1, 3], vec![1.0, -1.0, 1.0], 1.0).unwrap();
    let r = theorem2_mc_check(&s, 0.1, MILLION, 0.005, 21).unwrap();
    assert!((r.mc_mean - r.analytic_mean).abs() <= 0.005 * r.analytic_mean, "{r:?}");
}

#[test]
fn monomial_variance_examples() {
    let one = theorem1_monomial_check(1.0, 1, 0.1, MILLION, 0.01, 1).unwrap();
    assert!((one.analytic_variance - 0.01).abs() < 1e-15);
    assert!(one.pass, "{one:?}");
    let three = theorem1_monomial_check(2.0, 3, 0.1, MILLION, 0.01, 2).unwrap();
    assert!((three.analytic_variance - 0.121204).abs() < 1e-12);
    assert!(three.pass, "{three:?}");
    assert_eq!(theorem1_closed_form(3.0, 5, 0.0).unwrap(), (3.0, 0.0));
}

#[test]
fn closed_form_is_the_all_ones_case_of_the_product_rule() {
    for order in 1..=6 {
        let spec = TaylorTermSpec::lowest_degree(order, order, 1.0).unwrap();
        let (m, v) = analytic_j_moments(&spec, 0.1);
        let (cm, cv) = theorem1_closed_form(1.0, order, 0.1).unwrap();
        assert!((m - cm).abs() < 1e-14 && (v - cv).abs() < 1e-14 * cv.max(1.0));
    }
}

#[test]
fn third_moment_matches_monte_carlo() {
    let s = 0.3;
    let exact = gaussian_moment(3, 1.0, s).unwrap();
    assert!((exact - (1.0 + 3.0 * s * s)).abs() < 1e-15);
    let mut r = rng::seeded(5);
    let mut acc = 0.0;
    for _ in 0..MILLION {
        let x = 1.0 + s * rng::standard_normal(&mut r);
        acc += x * x * x;
    }
    assert!((acc / MILLION as f64 - exact).abs() <= 0.01 * exact);
}

#[test]
fn product_rule_examples() {
    let pair = TaylorTermSpec::lowest_degree(2, 2, 1.0).unwrap();
    let r = theorem2_mc_check(&pair, 0.05, MILLION, 0.01, 3).unwrap();
    assert!((r.analytic_variance - (1.0025f64.powi(2) - 1.0)).abs() < 1e-15);
    assert!(r.pass, "{r:?}");
    let square = TaylorTermSpec::new(vec![2], vec![1.0], 1.0).unwrap();
    let r = theorem2_mc_check(&square, 0.1, MILLION, 0.01, 4).unwrap();
    assert!((r.analytic_mean - 1.01).abs() < 1e-15);
    assert!(r.pass, "{r:?}");
    let empty = TaylorTermSpec::new(vec![0, 0], vec![1.0, 1.0], 1.0).unwrap();
    let r = theorem2_mc_check(&empty, 0.1, 1000, 0.01, 5).unwrap();
    assert_eq!((r.mc_mean, r.mc_variance, r.analytic_variance), (1.0, 0.0, 0.0));
    assert!(r.pass);
}

#[test]
fn independent_factors_multiply() {
    let spec = TaylorTermSpec::new(vec![1, 2, 3], vec![1.0, -1.0, 1.0], 1.0).unwrap();
    let r = proposition1_check(&spec, 0.2, 200_000, 3.0, 8).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn adding_a_variable_raises_variance_and_lowers_stability() {
    let small = TaylorTermSpec::new(vec![1, 0], vec![1.0, 1.0], 1.0).unwrap();
    let large = TaylorTermSpec::new(vec![1, 1], vec![1.0, 1.0], 1.0).unwrap();
    let r = theorem3_ratio_check(&small, &large, 0.1, 200_000, 9).unwrap();
    assert!(r.variance_ratio > 1.0);
    assert!(r.stability_bound <= 1.0);
    assert!(r.pass, "{r:?}");
    let same = theorem3_ratio_check(&large, &large, 0.1, 10_000, 9).unwrap();
    assert!(same.degenerate && same.pass);
    assert!((same.variance_ratio - 1.0).abs() < 1e-15 && (same.stability_ratio - 1.0).abs() < 1e-15);
    assert!(theorem3_ratio_check(&large, &small, 0.1, 100, 9).is_err());
}

#[test]
fn scalar_concept_regression() {
    let p = ConceptRegressionProblem {
        alpha: vec![1.5],
        beta_sq: vec![0.25],
        target: 2.0,
    };
    let s = solve_concept_regression(&p).unwrap();
    assert!((s.coefficients[0] - 2.0 * 1.5 / (2.25 + 0.25)).abs() < 1e-12);
    let zero = ConceptRegressionProblem { target: 0.0, ..p };
    assert!(solve_concept_regression(&zero).unwrap().coefficients.iter().all(|&u| u == 0.0));
}

#[test]
fn two_concepts_scale_with_relative_stability() {
    let p = ConceptRegressionProblem {
        alpha: vec![1.2, 0.4],
        beta_sq: vec![0.3, 0.05],
        target: 1.7,
    };
    let s = solve_concept_regression(&p).unwrap();
    let got = s.coefficients[0].abs() / s.coefficients[1].abs();
    let want = (1.2 / 0.3) / (0.4 / 0.05);
    assert!((got - want).abs() <= 1e-6 * want);
    assert!(proportionality_error(&p, &s.coefficients) <= 1e-6);
}

#[test]
fn single_concept_bounds_are_tight() {
    let stats = theorem5_construct(&[1.3], 0.1, 50_000, 4).unwrap();
    let r = theorem5_bound_check(&stats, 1.3, 1.3, 1e-12).unwrap();
    let row = r.rows[0];
    assert!(r.all_hold);
    assert!((row.lower - row.stability_c).abs() <= 1e-9 * row.stability_c);
    assert!((row.upper - row.stability_c).abs() <= 1e-9 * row.stability_c);
}

#[test]
fn hundred_constructed_concepts_respect_both_bounds() {
    let mut r = rng::seeded(77);
    let us: Vec<f64> = (0..100).map(|_| bayes_concepts_core::oracle::uniform_in(&mut r, 0.5, 2.0)).collect();
    let stats = theorem5_construct(&us, 0.1, 20_000, 6).unwrap();
    let lo = us.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = us.iter().copied().fold(0.0, f64::max);
    let report = theorem5_bound_check(&stats, lo, hi, 1e-12).unwrap();
    assert!(report.all_hold);
    assert!(theorem5_construct(&[0.0], 0.1, 10, 0).is_err());
}

#[test]
fn zero_variance_rows_are_skipped() {
    let s = ConceptStats {
        mean_i: 1.0,
        var_i: 0.0,
        mean_c: 1.0,
        var_c: 0.0,
    };
    let r = theorem5_bound_check(&[s], 1.0, 2.0, 0.0).unwrap();
    assert!(r.rows[0].skipped && r.all_hold);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_mean_moments_never_decrease(s in 0.0f64..2.0) {
        let mut prev = 1.0;
        for k in 1..=12 {
            let m = gaussian_moment(k, 1.0, s).unwrap();
            prop_assert!(m >= prev);
            prev = m;
        }
    }

    #[test]
    fn regression_solution_zeroes_the_gradient(
        alpha in prop::collection::vec(0.2f64..2.0, 1..8),
        seed in 0u64..1000,
        target in -3.0f64..3.0,
    ) {
        let mut r = rng::seeded(seed);
        let beta_sq: Vec<f64> = alpha.iter().map(|_| bayes_concepts_core::oracle::uniform_in(&mut r, 0.05, 1.0)).collect();
        let p = ConceptRegressionProblem { alpha, beta_sq, target };
        let s = solve_concept_regression(&p).unwrap();
        prop_assert!(s.residual <= 1e-9);
        prop_assert!(s.disagreement <= 1e-6);
        prop_assert!(proportionality_error(&p, &s.coefficients) <= 1e-6);
    }
}
