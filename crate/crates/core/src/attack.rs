//! Projected gradient ascent on the cross-entropy inside an `l_inf` ball.

use alloc::vec::Vec;

use crate::bnn::{BnnEnsemble, BnnModel};
use crate::dataset::Dataset;
use crate::nn::{self, Classifier, CrossEntropy, MlpModel};
use crate::par;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            steps: 20,
            step_size: 0.01,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite() && self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::arg("epsilon and step size must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// A model the attacker can differentiate. `step` and `seed` let stochastic
/// models draw fresh weights for every step.
pub trait AttackTarget: Sync {
    fn input_dim(&self) -> usize;
    fn input_gradient(&self, x: &[f64], label: usize, step: usize, seed: u64) -> Result<Vec<f64>>;
}

impl AttackTarget for MlpModel {
    fn input_dim(&self) -> usize {
        MlpModel::input_dim(self)
    }

    fn input_gradient(&self, x: &[f64], label: usize, _step: usize, _seed: u64) -> Result<Vec<f64>> {
        Ok(nn::backward(self, x, &CrossEntropy { label })?.1.input)
    }
}

/// Differentiates one freshly sampled network per step, seeded by
/// `derive(seed, step)`.
impl AttackTarget for BnnModel {
    fn input_dim(&self) -> usize {
        BnnModel::input_dim(self)
    }

    fn input_gradient(&self, x: &[f64], label: usize, step: usize, seed: u64) -> Result<Vec<f64>> {
        let net = self.sample_weights(rng::derive(seed, step as u64))?;
        Ok(nn::backward(&net, x, &CrossEntropy { label })?.1.input)
    }
}

/// Clamps `candidate` into the `l_inf` ball of radius `epsilon` around
/// `center` so that `|candidate_i - center_i| <= epsilon` holds in floating
/// point, not just in exact arithmetic.
pub fn project_linf(candidate: &mut [f64], center: &[f64], epsilon: f64) {
    for (c, &x) in candidate.iter_mut().zip(center) {
        let mut lo = x - epsilon;
        while x - lo > epsilon {
            lo = lo.next_up();
        }
        let mut hi = x + epsilon;
        while hi - x > epsilon {
            hi = hi.next_down();
        }
        *c = c.clamp(lo, hi);
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sign-gradient ascent from `x` itself (no random start), projecting after
/// every step.
pub fn pgd_attack<T: AttackTarget + ?Sized>(target: &T, x: &[f64], label: usize, config: &PgdConfig, seed: u64) -> Result<Vec<f64>> {
    config.validate()?;
    if x.len() != target.input_dim() {
        return Err(Error::shape("pgd input", target.input_dim(), x.len()));
    }
    let mut adv = x.to_vec();
    for step in 0..config.steps {
        let g = target.input_gradient(&adv, label, step, seed)?;
        for (a, g) in adv.iter_mut().zip(g) {
            *a += config.step_size * sign(g);
        }
        project_linf(&mut adv, x, config.epsilon);
    }
    Ok(adv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Robustness {
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
}

/// Clean and adversarial accuracy of `judge` on `data`, attacking through
/// `target`; row `i` uses attack seed `derive(seed, i)`.
pub fn adversarial_accuracy<T, C>(target: &T, judge: &C, data: &Dataset, config: &PgdConfig, seed: u64) -> Result<Robustness>
where
    T: AttackTarget + ?Sized,
    C: Classifier + ?Sized,
{
    if data.is_empty() {
        return Err(Error::arg("empty dataset"));
    }
    let rows = par::map_indexed(data.len(), |i| -> Result<(bool, bool)> {
        let x = data.row(i);
        let y = data.label(i);
        let adv = pgd_attack(target, x, y, config, rng::derive(seed, i as u64))?;
        Ok((judge.predict(x)? == y, judge.predict(&adv)? == y))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    Ok(Robustness {
        clean_accuracy: rows.iter().filter(|r| r.0).count() as f64 / n,
        adversarial_accuracy: rows.iter().filter(|r| r.1).count() as f64 / n,
    })
}

/// Robustness of a BNN: attacked one sampled network per step, judged by its
/// `eval_samples`-network predictive distribution.
pub fn bnn_adversarial_accuracy(
    bnn: &BnnModel,
    data: &Dataset,
    config: &PgdConfig,
    eval_samples: usize,
    seed: u64,
) -> Result<Robustness> {
    let judge = BnnEnsemble::sample(bnn, eval_samples, rng::derive(seed, rng::stream::EVAL))?;
    adversarial_accuracy(bnn, &judge, data, config, seed)
}
