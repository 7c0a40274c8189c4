//! Supervised training of deterministic MLPs with Adam, plus the
//! matched-accuracy checkpoint pairing used to compare a DNN and a BNN at the
//! same point of their learning curves.

use alloc::format;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::nn::{self, Classifier, CrossEntropy, Gradients, Loss, MlpModel};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Mini-batch size; `0` or anything `>= len` means full-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Keep a copy of the model after every epoch.
    pub keep_checkpoints: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            keep_checkpoints: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("learning rate must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// A trained model, its training accuracy after each epoch and, when
/// requested, the model after each epoch (`checkpoints[e]` pairs with
/// `accuracy[e]`).
#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub accuracy: Vec<f64>,
    pub checkpoints: Vec<M>,
}

/// The row order for one epoch, cut into batches.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if batch_size == 0 || batch_size >= n {
        return alloc::vec![idx];
    }
    let mut r = rng::seeded(rng::derive_path(seed, &[rng::stream::SHUFFLE, epoch as u64]));
    rng::shuffle(&mut r, &mut idx);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn accuracy<C: Classifier + ?Sized>(model: &C, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for i in 0..data.len() {
        if model.predict(data.row(i))? == data.label(i) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

fn apply_gradients(model: &mut MlpModel, adam: &mut Adam, grads: &Gradients) -> Result<()> {
    adam.begin_step();
    for (i, layer) in model.layers_mut().iter_mut().enumerate() {
        layer
            .weight_mut()
            .try_update(|w| adam.update(2 * i, w, &grads.weights[i]))?;
        layer
            .bias_mut()
            .try_update(|b| adam.update(2 * i + 1, b, &grads.biases[i]))?;
    }
    Ok(())
}

pub(crate) fn adam_slots(model: &MlpModel) -> Vec<usize> {
    model
        .layers()
        .iter()
        .flat_map(|l| [l.weight().len(), l.bias().len()])
        .collect()
}

/// Minimises the mean cross-entropy with Adam. Deterministic given the seed.
pub fn train_dnn(model: MlpModel, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome<MlpModel>> {
    config.validate()?;
    if data.n_features() != model.input_dim() {
        return Err(Error::shape("train_dnn features", model.input_dim(), data.n_features()));
    }
    if data.n_classes() > model.output_dim() {
        return Err(Error::arg("model has fewer outputs than the dataset has classes"));
    }
    if data.is_empty() && config.epochs > 0 {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    let mut model = model;
    let mut adam = Adam::new(config.adam(), &adam_slots(&model));
    let mut log = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::new();
    for epoch in 0..config.epochs {
        for (b, batch) in epoch_batches(data.len(), config.batch_size, config.seed, epoch)
            .iter()
            .enumerate()
        {
            let mut grads = Gradients::zeros_like(&model);
            let scale = 1.0 / batch.len() as f64;
            let mut total = 0.0;
            for &i in batch {
                let x = data.row(i);
                let trace = model.forward(x)?;
                let (loss, dlogits) = CrossEntropy { label: data.label(i) }.value_and_gradient(trace.logits())?;
                total += loss;
                nn::accumulate_backward(&model, x, &trace, &dlogits, scale, &mut grads);
            }
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
            }
            apply_gradients(&mut model, &mut adam, &grads)?;
        }
        log.push(accuracy(&model, data)?);
        if config.keep_checkpoints {
            checkpoints.push(model.clone());
        }
    }
    Ok(TrainOutcome {
        model,
        accuracy: log,
        checkpoints,
    })
}

/// Result of pairing a DNN epoch with a BNN epoch of (nearly) equal training
/// accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyMatch {
    pub dnn_epoch: usize,
    pub bnn_epoch: usize,
    /// Absolute accuracy gap, as a fraction.
    pub gap: f64,
    /// Set when the gap exceeds the tolerance.
    pub flagged: bool,
}

/// The run whose final accuracy is lower keeps its final epoch; the other run
/// contributes the epoch with the closest accuracy, later epochs winning ties.
/// `tolerance` is a fraction (0.01 = one percentage point).
pub fn match_accuracy(dnn_log: &[f64], bnn_log: &[f64], tolerance: f64) -> Result<AccuracyMatch> {
    let (&dnn_final, &bnn_final) = match (dnn_log.last(), bnn_log.last()) {
        (Some(d), Some(b)) => (d, b),
        _ => return Err(Error::arg("accuracy logs must be non-empty")),
    };
    let closest = |log: &[f64], target: f64| {
        let mut best = 0;
        for (i, &a) in log.iter().enumerate() {
            if (a - target).abs() <= (log[best] - target).abs() {
                best = i;
            }
        }
        best
    };
    let (dnn_epoch, bnn_epoch) = if bnn_final <= dnn_final {
        (closest(dnn_log, bnn_final), bnn_log.len() - 1)
    } else {
        (dnn_log.len() - 1, closest(bnn_log, dnn_final))
    };
    let gap = (dnn_log[dnn_epoch] - bnn_log[bnn_epoch]).abs();
    Ok(AccuracyMatch {
        dnn_epoch,
        bnn_epoch,
        gap,
        flagged: gap > tolerance + 1e-12,
    })
}
