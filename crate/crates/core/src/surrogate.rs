//! The surrogate of a Bayesian network: its mean network with diagonal
//! Gaussian noise injected at the input and at hidden pre-activations, fitted
//! layer by layer so that each layer's feature distribution matches the
//! Bayesian network's.
//!
//! Layer `l` (1-based) features are the pre-activations `h(l)`; `h(L)` are the
//! logits. Noise point `0` is the input and noise point `l` is `h(l)` before
//! its ReLU. The features of layer `l` depend on noise points `0..l`.
//! Distributions are summarised by per-dimension Gaussians.

use alloc::vec;
use alloc::vec::Vec;

use crate::bnn::BnnModel;
use crate::math;
use crate::nn::{Activation, MlpModel};
use crate::par;
use crate::rng;
use crate::{Error, Result};

/// Floor applied to every variance inside a KL divergence.
pub const VARIANCE_FLOOR: f64 = 1e-10;

const LOG_VAR_MIN: f64 = -69.07755278982137; // ln 1e-30
const LOG_VAR_MAX: f64 = 9.210340371976184; // ln 1e4

/// Diagonal noise variances for the input and every hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationPlan {
    points: Vec<Vec<f64>>,
}

impl PerturbationPlan {
    /// All-zero plan for a network with the given `[input, hidden.., output]` widths.
    pub fn zeros(widths: &[usize]) -> Self {
        let n = widths.len().saturating_sub(1);
        Self {
            points: widths[..n].iter().map(|&w| vec![0.0; w]).collect(),
        }
    }

    /// `points[0]` is the input variance, `points[l]` the variance at `h(l)`.
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.iter().flatten().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::arg("plan variances must be finite and nonnegative"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn input(&self) -> &[f64] {
        &self.points[0]
    }

    /// Variance at hidden layer `l >= 1`.
    pub fn hidden(&self, l: usize) -> &[f64] {
        &self.points[l]
    }

    fn check(&self, model: &MlpModel) -> Result<()> {
        let w = model.widths();
        if self.points.len() != w.len() - 1 || self.points.iter().zip(&w).any(|(p, &d)| p.len() != d) {
            return Err(Error::arg("plan does not match the network widths"));
        }
        Ok(())
    }
}

/// Per-dimension sample moments of one layer's features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistribution {
    pub mean: Vec<f64>,
    /// Unbiased sample variance.
    pub variance: Vec<f64>,
    pub draws: usize,
}

impl FeatureDistribution {
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::arg("need at least two draws"));
        }
        let dim = samples[0].len();
        let mut m = crate::stats::RunningMoments::new(dim);
        for s in samples {
            m.push(s);
        }
        Ok(Self {
            mean: m.mean().to_vec(),
            variance: m.variance(),
            draws: samples.len(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_layer(num_layers: usize, layer: usize) -> Result<()> {
    if layer == 0 || layer > num_layers {
        return Err(Error::arg(alloc::format!("layer {layer} outside 1..={num_layers}")));
    }
    Ok(())
}

/// Moments of `h(layer)` over whole-network weight draws; draw `d` uses
/// `bnn.sample_weights(derive(seed, d))`.
pub fn bnn_feature_samples(bnn: &BnnModel, x: &[f64], layer: usize, draws: usize, seed: u64) -> Result<FeatureDistribution> {
    check_layer(bnn.num_layers(), layer)?;
    let samples = par::map_indexed(draws, |d| -> Result<Vec<f64>> {
        let net = bnn.sample_weights(rng::derive(seed, d as u64))?;
        Ok(net.forward(x)?.pre_activations.swap_remove(layer - 1))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    FeatureDistribution::from_samples(&samples)
}

/// Standard-normal noise for every noise point of one draw, drawn input first
/// and then layer by layer so that shallower points never depend on deeper ones.
fn draw_unit_noise(widths: &[usize], seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    widths[..widths.len() - 1]
        .iter()
        .map(|&w| {
            let mut z = vec![0.0; w];
            rng::fill_standard_normal(&mut r, &mut z);
            z
        })
        .collect()
}

/// Forward pass with `sqrt(var) * z` added at every noise point below `upto`;
/// returns the pre-activations of layers `1..=upto`.
fn noisy_forward(model: &MlpModel, x: &[f64], plan: &PerturbationPlan, z: &[Vec<f64>], upto: usize) -> Vec<Vec<f64>> {
    let mut a: Vec<f64> = x
        .iter()
        .zip(&plan.points[0])
        .zip(&z[0])
        .map(|((&v, &s), &e)| v + math::sqrt(s) * e)
        .collect();
    let mut pres = Vec::with_capacity(upto);
    for (i, layer) in model.layers()[..upto].iter().enumerate() {
        let mut h = layer.pre_activation(&a);
        pres.push(h.clone());
        if i + 1 < upto {
            for ((v, &s), &e) in h.iter_mut().zip(&plan.points[i + 1]).zip(&z[i + 1]) {
                *v = layer.activation().apply(*v + math::sqrt(s) * e);
            }
            a = h;
        }
    }
    pres
}

/// Moments of the surrogate's `h(layer)`; draw `d` uses noise seeded by
/// `derive(seed, d)`.
pub fn surrogate_feature_samples(
    dnn: &MlpModel,
    x: &[f64],
    plan: &PerturbationPlan,
    layer: usize,
    draws: usize,
    seed: u64,
) -> Result<FeatureDistribution> {
    check_layer(dnn.num_layers(), layer)?;
    plan.check(dnn)?;
    if x.len() != dnn.input_dim() {
        return Err(Error::shape("surrogate input", dnn.input_dim(), x.len()));
    }
    let widths = dnn.widths();
    let samples: Vec<Vec<f64>> = par::map_indexed(draws, |d| {
        let z = draw_unit_noise(&widths, rng::derive(seed, d as u64));
        noisy_forward(dnn, x, plan, &z, layer).swap_remove(layer - 1)
    });
    FeatureDistribution::from_samples(&samples)
}

#[inline]
fn kl_dim(mp: f64, vp: f64, mq: f64, vq: f64) -> f64 {
    let (vp, vq) = (vp.max(VARIANCE_FLOOR), vq.max(VARIANCE_FLOOR));
    let d = mp - mq;
    (0.5 * math::log(vq / vp) + (vp + d * d) / (2.0 * vq) - 0.5).max(0.0)
}

/// `KL(p || q)` between diagonal Gaussians, summed over dimensions.
pub fn kl_diag_gaussian(p: &FeatureDistribution, q: &FeatureDistribution) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::shape("kl_diag_gaussian", p.dim(), q.dim()));
    }
    Ok((0..p.dim())
        .map(|k| kl_dim(p.mean[k], p.variance[k], q.mean[k], q.variance[k]))
        .sum())
}

/// `KL(p || N(mu 1, s^2 I))` with `mu` and `s^2` pooled over every draw and
/// dimension of `samples`.
fn baseline_kl(samples: &[Vec<f64>]) -> Result<f64> {
    let p = FeatureDistribution::from_samples(samples)?;
    let pooled: Vec<f64> = samples.iter().flatten().copied().collect();
    let (mu, var) = crate::stats::mean_variance(&pooled);
    let q = FeatureDistribution {
        mean: vec![mu; p.dim()],
        variance: vec![var; p.dim()],
        draws: p.draws,
    };
    kl_diag_gaussian(&p, &q)
}

/// Mean over `xs` of `KL(p_BNN(h(layer)) || N(mu 1, s^2 I))`.
pub fn baseline_distribution_error(bnn: &BnnModel, xs: &[Vec<f64>], layer: usize, draws: usize, seed: u64) -> Result<f64> {
    check_layer(bnn.num_layers(), layer)?;
    if xs.is_empty() {
        return Err(Error::arg("empty sample set"));
    }
    let nets = sample_networks(bnn, draws, seed)?;
    let mut total = 0.0;
    for x in xs {
        let samples = layer_samples(&nets, x, layer)?;
        total += baseline_kl(&samples)?;
    }
    Ok(total / xs.len() as f64)
}

fn sample_networks(bnn: &BnnModel, draws: usize, seed: u64) -> Result<Vec<MlpModel>> {
    if draws < 2 {
        return Err(Error::arg("need at least two draws"));
    }
    par::map_indexed(draws, |d| bnn.sample_weights(rng::derive(seed, d as u64)))
        .into_iter()
        .collect()
}

fn layer_samples(nets: &[MlpModel], x: &[f64], layer: usize) -> Result<Vec<Vec<f64>>> {
    nets.iter()
        .map(|n| Ok(n.forward(x)?.pre_activations.swap_remove(layer - 1)))
        .collect()
}

/// Mean over `xs` of the KL between the BNN's and the surrogate's layer
/// features. Weight draws use `derive(seed, TARGET)`, surrogate noise for
/// sample `i` uses `derive_path(seed, [NOISE, i])`.
pub fn evaluate_plan(
    bnn: &BnnModel,
    dnn: &MlpModel,
    xs: &[Vec<f64>],
    plan: &PerturbationPlan,
    layer: usize,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    check_layer(bnn.num_layers(), layer)?;
    if xs.is_empty() {
        return Err(Error::arg("empty sample set"));
    }
    let target_seed = rng::derive(seed, rng::stream::TARGET);
    let mut total = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let p = bnn_feature_samples(bnn, x, layer, draws, target_seed)?;
        let noise_seed = rng::derive_path(seed, &[rng::stream::NOISE, i as u64]);
        let q = surrogate_feature_samples(dnn, x, plan, layer, draws, noise_seed)?;
        total += kl_diag_gaussian(&p, &q)?;
    }
    Ok(total / xs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFitConfig {
    /// Draws per distribution estimate, shared by every step.
    pub draws: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Consecutive KL increases that abort a layer fit.
    pub divergence_patience: usize,
    pub seed: u64,
}

impl Default for SurrogateFitConfig {
    fn default() -> Self {
        Self {
            draws: 256,
            steps: 500,
            learning_rate: 0.01,
            divergence_patience: 10,
            seed: 0,
        }
    }
}

/// Outcome of fitting the noise below one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFit {
    /// 1-based layer whose features were matched.
    pub layer: usize,
    /// KL with this stage's noise at zero and all lower noise fitted.
    pub kl_before: f64,
    /// KL at the retained iterate.
    pub kl_after: f64,
    pub baseline_kl: f64,
    pub steps_run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFit {
    pub plan: PerturbationPlan,
    pub layers: Vec<LayerFit>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error(transparent)]
    Numeric(#[from] Error),
    /// The KL rose for too many consecutive steps; `partial` holds the layers
    /// fitted before this one.
    #[error("surrogate fit diverged at layer {layer} after {steps} steps")]
    Diverged {
        layer: usize,
        steps: usize,
        partial: alloc::boxed::Box<SurrogateFit>,
    },
}

/// Per-sample state for one fitting stage: target moments, the features just
/// below the noise point (without that point's noise) and the unit noise there.
struct StageSample {
    p_mean: Vec<f64>,
    p_var: Vec<f64>,
    base: Vec<Vec<f64>>,
    unit: Vec<Vec<f64>>,
}

/// Objective and gradient with respect to the log-variances at the noise point.
fn stage_objective(
    layer: &crate::nn::DenseLayer,
    gate: bool,
    sample: &StageSample,
    var: &[f64],
    want_grad: bool,
) -> (f64, Vec<f64>) {
    let draws = sample.base.len();
    let dim_in = var.len();
    let dim_out = layer.output_dim();
    let sd: Vec<f64> = var.iter().map(|&v| math::sqrt(v)).collect();
    let mut pre = Vec::with_capacity(draws);
    let mut hs = Vec::with_capacity(draws);
    for (b, z) in sample.base.iter().zip(&sample.unit) {
        let u: Vec<f64> = b.iter().zip(z).zip(&sd).map(|((&b, &z), &s)| b + s * z).collect();
        let a: Vec<f64> = if gate {
            u.iter().map(|&v| Activation::Relu.apply(v)).collect()
        } else {
            u.clone()
        };
        hs.push(layer.pre_activation(&a));
        pre.push(u);
    }
    let mut mq = vec![0.0; dim_out];
    for h in &hs {
        for (m, v) in mq.iter_mut().zip(h) {
            *m += v;
        }
    }
    mq.iter_mut().for_each(|m| *m /= draws as f64);
    let mut vq = vec![0.0; dim_out];
    for h in &hs {
        for ((s, v), m) in vq.iter_mut().zip(h).zip(&mq) {
            *s += (v - m) * (v - m);
        }
    }
    vq.iter_mut().for_each(|s| *s /= (draws - 1) as f64);
    let mut kl = 0.0;
    let mut g_mean = vec![0.0; dim_out];
    let mut g_var = vec![0.0; dim_out];
    for k in 0..dim_out {
        kl += kl_dim(sample.p_mean[k], sample.p_var[k], mq[k], vq[k]);
        let vqf = vq[k].max(VARIANCE_FLOOR);
        let vpf = sample.p_var[k].max(VARIANCE_FLOOR);
        let d = sample.p_mean[k] - mq[k];
        g_mean[k] = -d / vqf;
        if vq[k] > VARIANCE_FLOOR {
            g_var[k] = 0.5 / vqf - (vpf + d * d) / (2.0 * vqf * vqf);
        }
    }
    if !want_grad {
        return (kl, Vec::new());
    }
    let w = layer.weight().data();
    let mut g_s = vec![0.0; dim_in];
    for ((h, u), z) in hs.iter().zip(&pre).zip(&sample.unit) {
        // d KL / d h for this draw.
        let dh: Vec<f64> = (0..dim_out)
            .map(|k| g_mean[k] / draws as f64 + g_var[k] * 2.0 * (h[k] - mq[k]) / (draws - 1) as f64)
            .collect();
        for j in 0..dim_in {
            if gate && u[j] <= 0.0 {
                continue;
            }
            let mut du = 0.0;
            for (k, &g) in dh.iter().enumerate() {
                du += g * w[k * dim_in + j];
            }
            // u = base + exp(s / 2) z, so du/ds = z sqrt(var) / 2.
            g_s[j] += du * z[j] * sd[j] * 0.5;
        }
    }
    (kl, g_s)
}

fn total_objective(
    layer: &crate::nn::DenseLayer,
    gate: bool,
    samples: &[StageSample],
    var: &[f64],
    want_grad: bool,
) -> (f64, Vec<f64>) {
    let parts = par::map_indexed(samples.len(), |i| stage_objective(layer, gate, &samples[i], var, want_grad));
    let n = samples.len() as f64;
    let mut kl = 0.0;
    let mut grad = vec![0.0; if want_grad { var.len() } else { 0 }];
    for (k, g) in parts {
        kl += k / n;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b / n;
        }
    }
    (kl, grad)
}

/// Moment-matching starting point: one shared variance that would explain the
/// average missing feature variance if the stage were linear.
fn initial_log_variance(layer: &crate::nn::DenseLayer, gate: bool, samples: &[StageSample], zero_var: &[f64]) -> f64 {
    let dim_in = zero_var.len();
    let w = layer.weight().data();
    let mut missing = 0.0;
    let mut gain = 0.0;
    for s in samples {
        let vq = stage_variance(layer, gate, s, zero_var);
        for k in 0..layer.output_dim() {
            missing += (s.p_var[k] - vq[k]).max(0.0);
            for j in 0..dim_in {
                let active = if gate {
                    s.base.iter().filter(|b| b[j] > 0.0).count() as f64 / s.base.len() as f64
                } else {
                    1.0
                };
                gain += w[k * dim_in + j] * w[k * dim_in + j] * active;
            }
        }
    }
    let v = if gain > 0.0 { missing / gain } else { 0.0 };
    math::log(v.clamp(1e-8, 1e2))
}

fn stage_variance(layer: &crate::nn::DenseLayer, gate: bool, s: &StageSample, var: &[f64]) -> Vec<f64> {
    let sd: Vec<f64> = var.iter().map(|&v| math::sqrt(v)).collect();
    let hs: Vec<Vec<f64>> = s
        .base
        .iter()
        .zip(&s.unit)
        .map(|(b, z)| {
            let a: Vec<f64> = b
                .iter()
                .zip(z)
                .zip(&sd)
                .map(|((&b, &z), &s)| {
                    let u = b + s * z;
                    if gate {
                        Activation::Relu.apply(u)
                    } else {
                        u
                    }
                })
                .collect();
            layer.pre_activation(&a)
        })
        .collect();
    FeatureDistribution::from_samples(&hs).expect("draws >= 2").variance
}

/// Fits the noise below each layer in turn, from the input upward, holding
/// lower variances fixed. `dnn` is normally the BNN's mean network. Each
/// stage keeps the best iterate seen, the zero-noise start included, so a
/// stage never ends with a larger KL than it started with.
pub fn fit_surrogate(
    bnn: &BnnModel,
    dnn: &MlpModel,
    xs: &[Vec<f64>],
    config: &SurrogateFitConfig,
) -> Result<SurrogateFit, FitError> {
    if bnn.widths() != dnn.widths() {
        return Err(Error::arg("BNN and surrogate architectures differ").into());
    }
    if xs.is_empty() {
        return Err(Error::arg("empty sample set").into());
    }
    if let Some(x) = xs.iter().find(|x| x.len() != dnn.input_dim()) {
        return Err(Error::shape("fit_surrogate input", dnn.input_dim(), x.len()).into());
    }
    if config.draws < 2 || !(config.learning_rate > 0.0) {
        return Err(Error::arg("need at least two draws and a positive learning rate").into());
    }
    let widths = dnn.widths();
    let num_layers = dnn.num_layers();
    let nets = sample_networks(bnn, config.draws, rng::derive(config.seed, rng::stream::TARGET))?;
    // Unit noise per sample and draw, fixed for the whole fit.
    let unit: Vec<Vec<Vec<Vec<f64>>>> = xs
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let s = rng::derive_path(config.seed, &[rng::stream::NOISE, i as u64]);
            (0..config.draws)
                .map(|d| draw_unit_noise(&widths, rng::derive(s, d as u64)))
                .collect()
        })
        .collect();
    let mut fit = SurrogateFit {
        plan: PerturbationPlan::zeros(&widths),
        layers: Vec::with_capacity(num_layers),
    };
    for layer in 1..=num_layers {
        let point = layer - 1;
        let dense = &dnn.layers()[layer - 1];
        let gate = point > 0;
        let mut baseline = 0.0;
        let mut samples = Vec::with_capacity(xs.len());
        for (i, x) in xs.iter().enumerate() {
            let target = layer_samples(&nets, x, layer)?;
            baseline += baseline_kl(&target)? / xs.len() as f64;
            let p = FeatureDistribution::from_samples(&target)?;
            let base: Vec<Vec<f64>> = unit[i]
                .iter()
                .map(|z| {
                    if point == 0 {
                        x.clone()
                    } else {
                        noisy_forward(dnn, x, &fit.plan, z, point).swap_remove(point - 1)
                    }
                })
                .collect();
            samples.push(StageSample {
                p_mean: p.mean,
                p_var: p.variance,
                base,
                unit: unit[i].iter().map(|z| z[point].clone()).collect(),
            });
        }
        let dim = widths[point];
        let zero = vec![0.0; dim];
        let (kl_before, _) = total_objective(dense, gate, &samples, &zero, false);
        let mut best = (kl_before, zero.clone());
        let mut log_var = vec![initial_log_variance(dense, gate, &samples, &zero); dim];
        let mut previous = f64::INFINITY;
        let mut rising = 0;
        let mut steps_run = 0;
        for step in 0..config.steps {
            let var: Vec<f64> = log_var.iter().map(|&s| math::exp(s)).collect();
            let (kl, grad) = total_objective(dense, gate, &samples, &var, true);
            if !kl.is_finite() {
                return Err(Error::NonFinite(alloc::format!("surrogate KL at layer {layer}")).into());
            }
            if kl < best.0 {
                best = (kl, var);
            }
            rising = if kl > previous { rising + 1 } else { 0 };
            previous = kl;
            steps_run = step + 1;
            if rising >= config.divergence_patience {
                return Err(FitError::Diverged {
                    layer,
                    steps: steps_run,
                    partial: alloc::boxed::Box::new(fit),
                });
            }
            for (s, g) in log_var.iter_mut().zip(&grad) {
                *s = (*s - config.learning_rate * g).clamp(LOG_VAR_MIN, LOG_VAR_MAX);
            }
        }
        if config.steps > 0 {
            let var: Vec<f64> = log_var.iter().map(|&s| math::exp(s)).collect();
            let (kl, _) = total_objective(dense, gate, &samples, &var, false);
            if kl < best.0 {
                best = (kl, var);
            }
        }
        fit.plan.points[point] = best.1;
        fit.layers.push(LayerFit {
            layer,
            kl_before,
            kl_after: best.0,
            baseline_kl: baseline,
            steps_run,
        });
    }
    Ok(fit)
}
