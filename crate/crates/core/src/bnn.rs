//! Mean-field Gaussian Bayesian networks.
//!
//! Every weight and bias is an independent `N(mu, sigma^2)` with
//! `sigma = softplus(rho)`, floored at [`SIGMA_FLOOR`]. The prior is `N(0, I)`.
//! Training minimises the negative evidence lower bound with the
//! reparameterisation `W = mu + sigma * z`; prediction averages the softmax of
//! several sampled networks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::math;
use crate::nn::{self, Activation, Classifier, CrossEntropy, DenseLayer, Gradients, Loss, MlpModel};
use crate::optim::Adam;
use crate::par;
use crate::rng;
use crate::train::{self, TrainConfig, TrainOutcome};
use crate::{Error, Result, Tensor};

/// Smallest standard deviation a weight can have.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Initial standard deviation of freshly initialised layers.
pub const DEFAULT_INITIAL_SIGMA: f64 = 0.05;

#[inline]
pub fn sigma_of(rho: f64) -> f64 {
    math::softplus(rho).max(SIGMA_FLOOR)
}

/// `rho` that yields standard deviation `sigma` (floored).
#[inline]
pub fn rho_of(sigma: f64) -> f64 {
    math::softplus_inverse(sigma.max(SIGMA_FLOOR))
}

/// Standard deviation used when drawing weights. The floor only keeps the KL
/// finite, so `rho` at or below the floor's preimage `floor_rho` samples as
/// the `rho -> -inf` limit, zero.
#[inline]
fn sampling_sigma(rho: f64, floor_rho: f64) -> f64 {
    if rho <= floor_rho {
        0.0
    } else {
        sigma_of(rho)
    }
}

/// `d sigma / d rho`, zero where the floor is active.
#[inline]
fn dsigma_drho(rho: f64) -> f64 {
    if math::softplus(rho) > SIGMA_FLOOR {
        math::sigmoid(rho)
    } else {
        0.0
    }
}

/// `KL[N(mu, sigma^2) || N(0, 1)]`.
#[inline]
pub fn kl_scalar(mu: f64, sigma: f64) -> f64 {
    -math::log(sigma) + 0.5 * (sigma * sigma + mu * mu - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldLayer {
    weight_mean: Tensor,
    weight_rho: Tensor,
    bias_mean: Tensor,
    bias_rho: Tensor,
    activation: Activation,
}

impl MeanFieldLayer {
    pub fn new(
        weight_mean: Tensor,
        weight_rho: Tensor,
        bias_mean: Tensor,
        bias_rho: Tensor,
        activation: Activation,
    ) -> Result<Self> {
        if weight_rho.shape() != weight_mean.shape() {
            return Err(Error::arg("weight mean and rho shapes differ"));
        }
        if bias_rho.shape() != bias_mean.shape() {
            return Err(Error::arg("bias mean and rho shapes differ"));
        }
        // Reuse the dense-layer shape checks.
        DenseLayer::new(weight_mean.clone(), bias_mean.clone(), activation)?;
        Ok(Self {
            weight_mean,
            weight_rho,
            bias_mean,
            bias_rho,
            activation,
        })
    }

    /// Layer whose means are `layer`'s parameters and whose every scale is `sigma`.
    pub fn from_dense(layer: &DenseLayer, sigma: f64) -> Result<Self> {
        let rho = rho_of(sigma);
        let w = layer.weight();
        let b = layer.bias();
        Self::new(
            w.clone(),
            Tensor::new(w.shape().to_vec(), vec![rho; w.len()])?,
            b.clone(),
            Tensor::new(b.shape().to_vec(), vec![rho; b.len()])?,
            layer.activation(),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.weight_mean.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight_mean.rows()
    }

    pub fn weight_mean(&self) -> &Tensor {
        &self.weight_mean
    }

    pub fn weight_rho(&self) -> &Tensor {
        &self.weight_rho
    }

    pub fn bias_mean(&self) -> &Tensor {
        &self.bias_mean
    }

    pub fn bias_rho(&self) -> &Tensor {
        &self.bias_rho
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight_sigma(&self) -> Vec<f64> {
        self.weight_rho.data().iter().map(|&r| sigma_of(r)).collect()
    }

    pub fn bias_sigma(&self) -> Vec<f64> {
        self.bias_rho.data().iter().map(|&r| sigma_of(r)).collect()
    }

    /// Mean of `sigma^2` over all weights and biases of the layer.
    pub fn mean_variance(&self) -> f64 {
        let n = self.weight_rho.len() + self.bias_rho.len();
        let sum: f64 = self
            .weight_rho
            .data()
            .iter()
            .chain(self.bias_rho.data())
            .map(|&r| {
                let s = sigma_of(r);
                s * s
            })
            .sum();
        sum / n as f64
    }

    fn mean_dense(&self) -> DenseLayer {
        DenseLayer::new(self.weight_mean.clone(), self.bias_mean.clone(), self.activation)
            .expect("validated at construction")
    }

    fn kl(&self) -> f64 {
        let pairs = self
            .weight_mean
            .data()
            .iter()
            .zip(self.weight_rho.data())
            .chain(self.bias_mean.data().iter().zip(self.bias_rho.data()));
        pairs.map(|(&m, &r)| kl_scalar(m, sigma_of(r))).sum()
    }
}

/// Standard-normal draws for every parameter, laid out like the model.
#[derive(Debug, Clone)]
struct Noise {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnnModel {
    layers: Vec<MeanFieldLayer>,
}

impl BnnModel {
    pub fn new(layers: Vec<MeanFieldLayer>) -> Result<Self> {
        // The mean network carries all the structural invariants.
        MlpModel::new(layers.iter().map(MeanFieldLayer::mean_dense).collect())?;
        Ok(Self { layers })
    }

    /// Means drawn exactly as [`MlpModel::init`] with the same seed, every
    /// scale set to `initial_sigma`.
    pub fn init(widths: &[usize], initial_sigma: f64, seed: u64) -> Result<Self> {
        if !(initial_sigma >= 0.0 && initial_sigma.is_finite()) {
            return Err(Error::arg("initial sigma must be finite and nonnegative"));
        }
        let mean = MlpModel::init(widths, seed)?;
        Self::with_uniform_sigma(&mean, &vec![initial_sigma; mean.num_layers()])
    }

    fn with_uniform_sigma(mean: &MlpModel, sigmas: &[f64]) -> Result<Self> {
        let layers = mean
            .layers()
            .iter()
            .zip(sigmas)
            .map(|(l, &s)| MeanFieldLayer::from_dense(l, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[MeanFieldLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(MeanFieldLayer::output_dim));
        w
    }

    /// The deterministic network built from the weight means.
    pub fn mean_model(&self) -> MlpModel {
        MlpModel::new(self.layers.iter().map(MeanFieldLayer::mean_dense).collect())
            .expect("validated at construction")
    }

    /// Per-layer average of `sigma^2` over weights and biases.
    pub fn layer_mean_variances(&self) -> Vec<f64> {
        self.layers.iter().map(MeanFieldLayer::mean_variance).collect()
    }

    /// Closed-form `KL[q || N(0, I)]` summed over every parameter.
    pub fn kl_to_prior(&self) -> f64 {
        self.layers.iter().map(MeanFieldLayer::kl).sum()
    }

    fn draw_noise(&self, seed: u64) -> Noise {
        let mut r = rng::seeded(seed);
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let mut w = vec![0.0; l.weight_mean.len()];
            rng::fill_standard_normal(&mut r, &mut w);
            let mut b = vec![0.0; l.bias_mean.len()];
            rng::fill_standard_normal(&mut r, &mut b);
            weights.push(w);
            biases.push(b);
        }
        Noise { weights, biases }
    }

    fn realise(&self, noise: &Noise) -> Result<MlpModel> {
        let floor_rho = rho_of(SIGMA_FLOOR);
        let shift = |mean: &Tensor, rho: &Tensor, z: &[f64]| -> Result<Tensor> {
            let data = mean
                .data()
                .iter()
                .zip(rho.data())
                .zip(z)
                .map(|((&m, &r), &z)| m + sampling_sigma(r, floor_rho) * z)
                .collect();
            Tensor::new(mean.shape().to_vec(), data)
        };
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                DenseLayer::new(
                    shift(&l.weight_mean, &l.weight_rho, &noise.weights[i])?,
                    shift(&l.bias_mean, &l.bias_rho, &noise.biases[i])?,
                    l.activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        MlpModel::new(layers)
    }

    /// One network `W = mu + sigma * z`, deterministic given the seed.
    pub fn sample_weights(&self, seed: u64) -> Result<MlpModel> {
        self.realise(&self.draw_noise(seed))
    }
}

pub fn sample_weights(bnn: &BnnModel, seed: u64) -> Result<MlpModel> {
    bnn.sample_weights(seed)
}

pub fn dnn_from_bnn_mean(bnn: &BnnModel) -> MlpModel {
    bnn.mean_model()
}

/// A BNN with the DNN's parameters as means and one shared variance per layer.
pub fn bnn_from_dnn(dnn: &MlpModel, per_layer_variances: &[f64]) -> Result<BnnModel> {
    if per_layer_variances.len() != dnn.num_layers() {
        return Err(Error::shape(
            "bnn_from_dnn variances",
            dnn.num_layers(),
            per_layer_variances.len(),
        ));
    }
    if per_layer_variances.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::arg("per-layer variances must be finite and nonnegative"));
    }
    let sigmas: Vec<f64> = per_layer_variances.iter().map(|&v| math::sqrt(v)).collect();
    BnnModel::with_uniform_sigma(dnn, &sigmas)
}

/// A fixed set of sampled networks whose averaged softmax is the BNN's
/// predictive distribution.
#[derive(Debug, Clone)]
pub struct BnnEnsemble {
    members: Vec<MlpModel>,
}

impl BnnEnsemble {
    /// Member `s` is `bnn.sample_weights(derive(seed, s))`.
    pub fn sample(bnn: &BnnModel, num_samples: usize, seed: u64) -> Result<Self> {
        if num_samples == 0 {
            return Err(Error::arg("need at least one sampled network"));
        }
        let members = (0..num_samples)
            .map(|s| bnn.sample_weights(rng::derive(seed, s as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members })
    }

    pub fn from_members(members: Vec<MlpModel>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::arg("an ensemble needs at least one member"))?;
        if members
            .iter()
            .any(|m| m.input_dim() != first.input_dim() || m.output_dim() != first.output_dim())
        {
            return Err(Error::arg("ensemble members disagree on dimensions"));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[MlpModel] {
        &self.members
    }
}

impl Classifier for BnnEnsemble {
    fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    fn num_classes(&self) -> usize {
        self.members[0].output_dim()
    }

    fn probabilities(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.num_classes()];
        for m in &self.members {
            for (a, p) in acc.iter_mut().zip(m.probabilities(input)?) {
                *a += p;
            }
        }
        let n = self.members.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }
}

/// Predictive class probabilities averaged over `num_samples` sampled networks.
pub fn bnn_predict(bnn: &BnnModel, input: &[f64], num_samples: usize, seed: u64) -> Result<Vec<f64>> {
    BnnEnsemble::sample(bnn, num_samples, seed)?.probabilities(input)
}

fn check_data(bnn: &BnnModel, data: &Dataset) -> Result<()> {
    if data.n_features() != bnn.input_dim() {
        return Err(Error::shape("bnn features", bnn.input_dim(), data.n_features()));
    }
    if data.n_classes() > bnn.output_dim() {
        return Err(Error::arg("model has fewer outputs than the dataset has classes"));
    }
    Ok(())
}

/// `-E_q[log p(batch | W)] + kl_weight * KL[q || N(0, I)]`, the expectation
/// estimated with `mc_samples` weight draws. The likelihood term is summed
/// over the batch.
pub fn elbo_loss(bnn: &BnnModel, batch: &Dataset, kl_weight: f64, mc_samples: usize, seed: u64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    if !(kl_weight >= 0.0) || mc_samples == 0 {
        return Err(Error::arg("kl weight must be nonnegative and mc samples positive"));
    }
    check_data(bnn, batch)?;
    let mut nll = 0.0;
    for s in 0..mc_samples {
        let net = bnn.sample_weights(rng::derive(seed, s as u64))?;
        for i in 0..batch.len() {
            nll -= math::log_softmax_at(&net.logits(batch.row(i))?, batch.label(i));
        }
    }
    let value = nll / mc_samples as f64 + kl_weight * bnn.kl_to_prior();
    if !value.is_finite() {
        return Err(Error::NonFinite("elbo loss".into()));
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnnTrainConfig {
    pub base: TrainConfig,
    /// Weight draws per optimisation step.
    pub mc_samples: usize,
    /// Multiplier of the KL term per batch; `None` means `1 / num_batches`.
    pub kl_weight: Option<f64>,
    /// Sampled networks used for the per-epoch accuracy.
    pub eval_samples: usize,
}

impl Default for BnnTrainConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            mc_samples: 1,
            kl_weight: None,
            eval_samples: 10,
        }
    }
}

impl BnnTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.mc_samples == 0 || self.eval_samples == 0 {
            return Err(Error::arg("mc and evaluation samples must be at least 1"));
        }
        if let Some(w) = self.kl_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::arg("kl weight must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

/// Accuracy of the `num_samples`-network predictive distribution.
pub fn bnn_accuracy(bnn: &BnnModel, data: &Dataset, num_samples: usize, seed: u64) -> Result<f64> {
    train::accuracy(&BnnEnsemble::sample(bnn, num_samples, seed)?, data)
}

fn apply_step(
    bnn: &mut BnnModel,
    adam: &mut Adam,
    noise: &[Noise],
    grads: &[Gradients],
    kl_weight: f64,
    scale: f64,
) -> Result<()> {
    adam.begin_step();
    let mc = noise.len() as f64;
    for (i, layer) in bnn.layers.iter_mut().enumerate() {
        let parts = [
            (&mut layer.weight_mean, &mut layer.weight_rho, true),
            (&mut layer.bias_mean, &mut layer.bias_rho, false),
        ];
        for (k, (mean, rho, is_weight)) in parts.into_iter().enumerate() {
            let n = mean.len();
            let mut g_mean = vec![0.0; n];
            let mut g_rho = vec![0.0; n];
            for j in 0..n {
                let (m, r) = (mean.data()[j], rho.data()[j]);
                let sigma = sigma_of(r);
                let mut gw = 0.0;
                let mut gz = 0.0;
                for (g, z) in grads.iter().zip(noise) {
                    let (g, z) = if is_weight {
                        (g.weights[i][j], z.weights[i][j])
                    } else {
                        (g.biases[i][j], z.biases[i][j])
                    };
                    gw += g;
                    gz += g * z;
                }
                g_mean[j] = scale * (gw / mc + kl_weight * m);
                g_rho[j] = scale * (gz / mc + kl_weight * (sigma - 1.0 / sigma)) * dsigma_drho(r);
            }
            mean.try_update(|p| adam.update(4 * i + 2 * k, p, &g_mean))?;
            rho.try_update(|p| adam.update(4 * i + 2 * k + 1, p, &g_rho))?;
        }
    }
    Ok(())
}

/// Minimises `(sum_batch NLL + kl_weight * KL) / batch_len` per mini-batch
/// with Adam on `(mu, rho)`. Uses the same initial batch order as
/// [`train::train_dnn`] with the same seed.
pub fn train_bnn(bnn: BnnModel, data: &Dataset, config: &BnnTrainConfig) -> Result<TrainOutcome<BnnModel>> {
    config.validate()?;
    check_data(&bnn, data)?;
    let base = &config.base;
    if data.is_empty() && base.epochs > 0 {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    let mut bnn = bnn;
    let slots: Vec<usize> = bnn
        .layers
        .iter()
        .flat_map(|l| {
            let (w, b) = (l.weight_mean.len(), l.bias_mean.len());
            [w, w, b, b]
        })
        .collect();
    let mut adam = Adam::new(base.adam(), &slots);
    let mut log = Vec::with_capacity(base.epochs);
    let mut checkpoints = Vec::new();
    for epoch in 0..base.epochs {
        let batches = train::epoch_batches(data.len(), base.batch_size, base.seed, epoch);
        let kl_weight = config.kl_weight.unwrap_or(1.0 / batches.len() as f64);
        for (b, batch) in batches.iter().enumerate() {
            let draw_seed = rng::derive_path(base.seed, &[rng::stream::WEIGHTS, epoch as u64, b as u64]);
            let noise: Vec<Noise> = (0..config.mc_samples)
                .map(|s| bnn.draw_noise(rng::derive(draw_seed, s as u64)))
                .collect();
            let mut grads = Vec::with_capacity(noise.len());
            for z in &noise {
                let net = bnn.realise(z)?;
                let mut g = Gradients::zeros_like(&net);
                let mut total = 0.0;
                for &i in batch {
                    let x = data.row(i);
                    let trace = net.forward(x)?;
                    let (loss, dlogits) = CrossEntropy { label: data.label(i) }.value_and_gradient(trace.logits())?;
                    total += loss;
                    nn::accumulate_backward(&net, x, &trace, &dlogits, 1.0, &mut g);
                }
                if !total.is_finite() {
                    return Err(Error::NonFinite(format!("bnn loss at epoch {epoch}, batch {b}")));
                }
                grads.push(g);
            }
            apply_step(&mut bnn, &mut adam, &noise, &grads, kl_weight, 1.0 / batch.len() as f64)?;
        }
        let eval_seed = rng::derive_path(base.seed, &[rng::stream::EVAL, epoch as u64]);
        log.push(bnn_accuracy(&bnn, data, config.eval_samples, eval_seed)?);
        if base.keep_checkpoints {
            checkpoints.push(bnn.clone());
        }
    }
    Ok(TrainOutcome {
        model: bnn,
        accuracy: log,
        checkpoints,
    })
}

/// Predictive probabilities for many inputs, fanned out across workers.
pub fn bnn_predict_many(ensemble: &BnnEnsemble, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    par::map_indexed(inputs.len(), |i| ensemble.probabilities(inputs[i]))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_scalar(0.0, 1.0), 0.0);
        assert_eq!(kl_scalar(1.0, 1.0), 0.5);
        let prior = bnn_from_dnn(
            &MlpModel::new(vec![DenseLayer::new(
                Tensor::matrix(1, 1, vec![0.0]).unwrap(),
                Tensor::vector(vec![0.0]).unwrap(),
                Activation::Identity,
            )
            .unwrap()])
            .unwrap(),
            &[1.0],
        )
        .unwrap();
        assert!(prior.kl_to_prior().abs() < 1e-12);
    }

    #[test]
    fn zero_variance_sample_equals_mean() {
        let mean = MlpModel::init(&[3, 5, 2], 4).unwrap();
        let bnn = bnn_from_dnn(&mean, &[0.0, 0.0]).unwrap();
        let s = bnn.sample_weights(9).unwrap();
        for (a, b) in s.layers().iter().zip(mean.layers()) {
            for (x, y) in a.weight().data().iter().zip(b.weight().data()) {
                assert!((x - y).abs() <= 1e-10);
            }
        }
        assert_eq!(bnn.sample_weights(9).unwrap(), s);
        assert_eq!(bnn.mean_model(), mean);
    }

    #[test]
    fn negative_variance_rejected() {
        let mean = MlpModel::init(&[2, 2], 1).unwrap();
        assert!(bnn_from_dnn(&mean, &[-1.0]).is_err());
    }

    #[test]
    fn predict_is_distribution_and_single_sample_matches() {
        let bnn = BnnModel::init(&[3, 4, 3], 0.3, 2).unwrap();
        let x = [0.2, -1.0, 0.5];
        let p = bnn_predict(&bnn, &x, 10, 5).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let one = bnn_predict(&bnn, &x, 1, 5).unwrap();
        let net = bnn.sample_weights(rng::derive(5, 0)).unwrap();
        assert_eq!(one, net.probabilities(&x).unwrap());
    }

    #[test]
    fn elbo_rejects_empty_batch() {
        let bnn = BnnModel::init(&[2, 2], 0.05, 1).unwrap();
        let empty = Dataset::new(2, 2, vec![], vec![]).unwrap();
        assert!(elbo_loss(&bnn, &empty, 1.0, 1, 0).is_err());
    }
}
