use bayes_concepts_core::bnn::{bnn_from_dnn, rho_of, BnnModel, MeanFieldLayer};
use bayes_concepts_core::nn::{Activation, DenseLayer, MlpModel};
use bayes_concepts_core::rng;
use bayes_concepts_core::stats::ScalarMoments;
use bayes_concepts_core::surrogate::{
    baseline_distribution_error, bnn_feature_samples, fit_surrogate, kl_diag_gaussian, surrogate_feature_samples,
    FeatureDistribution, PerturbationPlan, SurrogateFitConfig,
};
use bayes_concepts_core::Tensor;

fn gaussian(mean: Vec<f64>, variance: Vec<f64>) -> FeatureDistribution {
    FeatureDistribution { mean, variance, draws: 0 }
}

/// One identity layer whose weights have scale `sigma_w` and whose biases are
/// effectively deterministic.
fn linear_bnn(w: &[f64], rows: usize, sigma_w: f64) -> BnnModel {
    let cols = w.len() / rows;
    let layer = MeanFieldLayer::new(
        Tensor::matrix(rows, cols, w.to_vec()).unwrap(),
        Tensor::matrix(rows, cols, vec![rho_of(sigma_w); w.len()]).unwrap(),
        Tensor::vector(vec![0.1; rows]).unwrap(),
        Tensor::vector(vec![rho_of(0.0); rows]).unwrap(),
        Activation::Identity,
    )
    .unwrap();
    BnnModel::new(vec![layer]).unwrap()
}

#[test]
fn kl_closed_forms() {
    let p = gaussian(vec![0.3, -1.0], vec![0.5, 2.0]);
    assert_eq!(kl_diag_gaussian(&p, &p).unwrap(), 0.0);
    let a = gaussian(vec![1.0], vec![1.0]);
    let b = gaussian(vec![0.0], vec![1.0]);
    assert!((kl_diag_gaussian(&a, &b).unwrap() - 0.5).abs() <= 1e-15);
    assert!(kl_diag_gaussian(&a, &gaussian(vec![0.0, 0.0], vec![1.0, 1.0])).is_err());
}

#[test]
fn gaussian_kl_matches_monte_carlo() {
    let (mp, sp, mq, sq) = (0.4, 0.7, -0.2, 1.3);
    let p = gaussian(vec![mp], vec![sp * sp]);
    let q = gaussian(vec![mq], vec![sq * sq]);
    let exact = kl_diag_gaussian(&p, &q).unwrap();
    let mut r = rng::seeded(8);
    let mut acc = ScalarMoments::default();
    for _ in 0..1_000_000 {
        let h = mp + sp * rng::standard_normal(&mut r);
        let lp = -(sp as f64).ln() - 0.5 * ((h - mp) / sp).powi(2);
        let lq = -(sq as f64).ln() - 0.5 * ((h - mq) / sq).powi(2);
        acc.push(lp - lq);
    }
    assert!(((acc.mean() - exact) / exact).abs() <= 0.01, "{} vs {exact}", acc.mean());
}

#[test]
fn zero_plan_reproduces_the_deterministic_forward() {
    let dnn = MlpModel::init(&[3, 8, 8, 2], 3).unwrap();
    let x = [0.5, -1.0, 1.5];
    let plan = PerturbationPlan::zeros(&dnn.widths());
    let trace = dnn.forward(&x).unwrap();
    for layer in 1..=3 {
        let f = surrogate_feature_samples(&dnn, &x, &plan, layer, 16, 1).unwrap();
        assert!(f.variance.iter().all(|&v| v <= 1e-24));
        for (a, b) in f.mean.iter().zip(&trace.pre_activations[layer - 1]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
    let again = surrogate_feature_samples(&dnn, &x, &plan, 2, 16, 1).unwrap();
    assert_eq!(again, surrogate_feature_samples(&dnn, &x, &plan, 2, 16, 1).unwrap());
}

#[test]
fn input_noise_propagates_through_a_linear_layer() {
    let w = [0.5, -1.0, 2.0, 1.5, 0.3, -0.7];
    let dnn = MlpModel::new(vec![DenseLayer::new(
        Tensor::matrix(2, 3, w.to_vec()).unwrap(),
        Tensor::vector(vec![0.0, 0.0]).unwrap(),
        Activation::Identity,
    )
    .unwrap()])
    .unwrap();
    let s2 = 0.04;
    let plan = PerturbationPlan::from_points(vec![vec![s2; 3]]).unwrap();
    let f = surrogate_feature_samples(&dnn, &[1.0, 2.0, 3.0], &plan, 1, 100_000, 4).unwrap();
    for r in 0..2 {
        let expect = s2 * w[r * 3..r * 3 + 3].iter().map(|v| v * v).sum::<f64>();
        assert!(((f.variance[r] - expect) / expect).abs() <= 0.02, "{} vs {expect}", f.variance[r]);
    }
}

#[test]
fn noise_above_a_layer_leaves_lower_features_untouched() {
    let dnn = MlpModel::init(&[3, 6, 6, 6, 2], 9).unwrap();
    let x = [0.2, 0.4, -0.9];
    let base = PerturbationPlan::from_points(vec![vec![0.01; 3], vec![0.02; 6], vec![0.0; 6], vec![0.0; 6]]).unwrap();
    let more = PerturbationPlan::from_points(vec![vec![0.01; 3], vec![0.02; 6], vec![0.5; 6], vec![0.0; 6]]).unwrap();
    for layer in 1..=2 {
        assert_eq!(
            surrogate_feature_samples(&dnn, &x, &base, layer, 64, 2).unwrap(),
            surrogate_feature_samples(&dnn, &x, &more, layer, 64, 2).unwrap()
        );
    }
    let a = surrogate_feature_samples(&dnn, &x, &base, 3, 64, 2).unwrap();
    let b = surrogate_feature_samples(&dnn, &x, &more, 3, 64, 2).unwrap();
    assert!(b.variance.iter().sum::<f64>() > a.variance.iter().sum::<f64>());
}

#[test]
fn zero_variance_bnn_features_are_deterministic() {
    let bnn = bnn_from_dnn(&MlpModel::init(&[3, 5, 2], 1).unwrap(), &[0.0, 0.0]).unwrap();
    let f = bnn_feature_samples(&bnn, &[1.0, 0.0, -1.0], 2, 32, 5).unwrap();
    assert!(f.variance.iter().all(|&v| v <= 1e-12));
    assert!(bnn_feature_samples(&bnn, &[1.0, 0.0, -1.0], 3, 32, 5).is_err());
    assert!(bnn_feature_samples(&bnn, &[1.0, 0.0, -1.0], 0, 32, 5).is_err());
}

#[test]
fn quadrupling_draws_halves_the_standard_error() {
    let bnn = BnnModel::init(&[3, 6, 2], 0.3, 2).unwrap();
    let x = [0.5, 1.0, -0.5];
    let spread = |draws: usize| {
        let mut m = ScalarMoments::default();
        for rep in 0..300 {
            m.push(bnn_feature_samples(&bnn, &x, 1, draws, rng::derive(77, rep)).unwrap().mean[0]);
        }
        m.variance().sqrt()
    };
    let ratio = spread(16) / spread(64);
    assert!((ratio - 2.0).abs() <= 0.3, "ratio {ratio}");
}

#[test]
fn baseline_is_zero_for_identical_dimensions_and_positive_otherwise() {
    // identical rows give identically distributed features
    let same = linear_bnn(&[0.5, 0.5, 0.5, 0.5], 2, 0.2);
    let kl = baseline_distribution_error(&same, &[vec![1.0, -1.0]], 1, 4000, 3).unwrap();
    assert!(kl < 0.01, "{kl}");
    let mixed = linear_bnn(&[3.0, 0.0, -2.0, 0.1], 2, 0.2);
    assert!(baseline_distribution_error(&mixed, &[vec![1.0, -1.0]], 1, 4000, 3).unwrap() > 1.0);
}

#[test]
fn zero_variance_target_needs_no_noise() {
    let dnn = MlpModel::init(&[3, 6, 2], 6).unwrap();
    let bnn = bnn_from_dnn(&dnn, &[0.0, 0.0]).unwrap();
    let cfg = SurrogateFitConfig {
        draws: 32,
        steps: 50,
        seed: 1,
        ..SurrogateFitConfig::default()
    };
    let fit = fit_surrogate(&bnn, &dnn, &[vec![0.1, 0.2, 0.3]], &cfg).unwrap();
    assert!(fit.layers.iter().all(|l| l.kl_after <= 1e-6));
    assert!(fit.plan.points().iter().flatten().all(|&v| v <= 1e-6));
}

#[test]
fn linear_fit_matches_the_weight_noise_variance() {
    let w = [0.8, -0.5, 1.2, 0.4, 1.0, -0.9];
    let sigma_w = 0.1;
    let bnn = linear_bnn(&w, 2, sigma_w);
    let x = vec![1.0, -2.0, 1.5];
    let cfg = SurrogateFitConfig {
        draws: 2000,
        seed: 4,
        ..SurrogateFitConfig::default()
    };
    let fit = fit_surrogate(&bnn, &bnn.mean_model(), &[x.clone()], &cfg).unwrap();
    let target = sigma_w * sigma_w * x.iter().map(|v| v * v).sum::<f64>();
    let sx = fit.plan.input();
    for r in 0..2 {
        let got: f64 = (0..3).map(|j| sx[j] * w[r * 3 + j] * w[r * 3 + j]).sum();
        assert!(((got - target) / target).abs() <= 0.1, "row {r}: {got} vs {target}");
    }
    assert!(fit.layers[0].kl_after <= fit.layers[0].kl_before);
}

#[test]
fn every_stage_ends_no_worse_than_it_started() {
    let bnn = BnnModel::init(&[4, 8, 8, 8, 2], 0.2, 12).unwrap();
    let xs: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin()).collect()).collect();
    let cfg = SurrogateFitConfig {
        draws: 64,
        steps: 100,
        seed: 3,
        ..SurrogateFitConfig::default()
    };
    let fit = fit_surrogate(&bnn, &bnn.mean_model(), &xs, &cfg).unwrap();
    assert_eq!(fit.layers.len(), 4);
    for l in &fit.layers {
        assert!(l.kl_after <= l.kl_before, "{l:?}");
        assert!(l.kl_after >= 0.0 && l.baseline_kl >= 0.0);
    }
}
