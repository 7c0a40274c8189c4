//! Dense networks: layers, the forward recursion and its reverse-mode
//! derivative.
//!
//! A network with `L` linear layers computes
//! `h(l) = W(l) · act(h(l-1)) + b(l)`, where `act` is ReLU on hidden layers and
//! the identity on the final (logit) layer. [`backward`] walks a recorded
//! [`ForwardTrace`] in reverse and returns the derivative of a scalar loss
//! with respect to every weight, every bias and the input.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::rng;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            // max(0, v) with the subgradient at 0 taken as 0 in `derivative`.
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::Identity => v,
        }
    }

    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One linear layer followed by an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weight: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::arg("layer weight must be a matrix"));
        }
        if bias.shape().len() != 1 || bias.len() != weight.rows() {
            return Err(Error::shape("DenseLayer::new bias", weight.rows(), bias.len()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub(crate) fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub(crate) fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    /// `W · input + b`.
    pub fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        let mut out = self.weight.matvec(input);
        for (o, b) in out.iter_mut().zip(self.bias.data()) {
            *o += b;
        }
        out
    }
}

/// A deterministic multi-layer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
}

impl MlpModel {
    /// Validates that the layers chain and that the last one emits logits.
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::arg("a model needs at least one layer"))?;
        if last.activation != Activation::Identity {
            return Err(Error::arg("final layer must be identity-activated"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    "MlpModel::new chain",
                    pair[0].output_dim(),
                    pair[1].input_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Random model with ReLU hidden layers; `widths = [input, hidden.., output]`.
    /// Weights and biases are uniform in `±1/sqrt(fan_in)`.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::arg("widths need an input and an output extent, all positive"));
        }
        let mut rng = rng::seeded(rng::derive(seed, rng::stream::INIT));
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / math::sqrt(fan_in as f64);
                let weight: Vec<f64> = (0..fan_in * fan_out)
                    .map(|_| rng::uniform(&mut rng, -bound, bound))
                    .collect();
                let bias: Vec<f64> = (0..fan_out)
                    .map(|_| rng::uniform(&mut rng, -bound, bound))
                    .collect();
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::new(Tensor::matrix(fan_out, fan_in, weight)?, Tensor::vector(bias)?, act)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
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

    /// Layer extents `[input, hidden.., output]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(DenseLayer::output_dim));
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("forward input", self.input_dim(), input.len()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = activations.last().map_or(input, Vec::as_slice);
            let pre = layer.pre_activation(x);
            let post = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            pre_activations.push(pre);
            activations.push(post);
        }
        Ok(ForwardTrace {
            pre_activations,
            activations,
        })
    }

    /// Logits without keeping the intermediate trace.
    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.pre_activation(&x);
            for v in &mut x {
                *v = layer.activation.apply(*v);
            }
        }
        Ok(x)
    }
}

/// Per-layer pre- and post-activation values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("trace of a non-empty model")
    }
}

pub fn forward(model: &MlpModel, input: &[f64]) -> Result<ForwardTrace> {
    model.forward(input)
}

/// A scalar loss of the logits together with its gradient.
pub trait Loss {
    fn value_and_gradient(&self, logits: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// `-log softmax(logits)[label]`.
#[derive(Debug, Clone, Copy)]
pub struct CrossEntropy {
    pub label: usize,
}

impl Loss for CrossEntropy {
    fn value_and_gradient(&self, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
        if self.label >= logits.len() {
            return Err(Error::arg("label index out of range"));
        }
        let mut grad = math::softmax(logits);
        let value = -math::log_softmax_at(logits, self.label);
        grad[self.label] -= 1.0;
        Ok((value, grad))
    }
}

/// `sum_k (logits_k - target_k)^2`.
#[derive(Debug, Clone, Copy)]
pub struct SquaredError<'a> {
    pub target: &'a [f64],
}

impl Loss for SquaredError<'_> {
    fn value_and_gradient(&self, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
        if self.target.len() != logits.len() {
            return Err(Error::shape("SquaredError target", logits.len(), self.target.len()));
        }
        let diff: Vec<f64> = logits.iter().zip(self.target).map(|(z, t)| z - t).collect();
        let value = diff.iter().map(|d| d * d).sum();
        Ok((value, diff.into_iter().map(|d| 2.0 * d).collect()))
    }
}

/// Derivatives of a loss with respect to all parameters and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            input: vec![0.0; model.input_dim()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.weights.iter_mut().chain(&mut self.biases) {
            g.iter_mut().for_each(|v| *v *= s);
        }
        self.input.iter_mut().for_each(|v| *v *= s);
    }

    /// Flattened parameter gradient, layer by layer, weights before biases.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Reverse pass over a recorded trace, adding `scale * d(loss)/d(.)` into
/// `grads`. `dlogits` is the loss gradient at the logits.
pub(crate) fn accumulate_backward(
    model: &MlpModel,
    input: &[f64],
    trace: &ForwardTrace,
    dlogits: &[f64],
    scale: f64,
    grads: &mut Gradients,
) {
    let mut delta: Vec<f64> = dlogits.to_vec();
    for (i, layer) in model.layers.iter().enumerate().rev() {
        for (d, &pre) in delta.iter_mut().zip(&trace.pre_activations[i]) {
            *d *= layer.activation.derivative(pre);
        }
        let x = if i == 0 {
            input
        } else {
            trace.activations[i - 1].as_slice()
        };
        let cols = layer.input_dim();
        let gw = &mut grads.weights[i];
        for (r, &d) in delta.iter().enumerate() {
            grads.biases[i][r] += scale * d;
            if d != 0.0 {
                for (g, &xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                    *g += scale * d * xv;
                }
            }
        }
        let mut next = vec![0.0; cols];
        let w = layer.weight.data();
        for (r, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                for (n, &wv) in next.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                    *n += d * wv;
                }
            }
        }
        delta = next;
    }
    for (g, d) in grads.input.iter_mut().zip(delta) {
        *g += scale * d;
    }
}

/// Loss value and its gradient with respect to every weight, bias and the
/// input.
pub fn backward(model: &MlpModel, input: &[f64], loss: &impl Loss) -> Result<(f64, Gradients)> {
    let trace = model.forward(input)?;
    let (value, dlogits) = loss.value_and_gradient(trace.logits())?;
    if !value.is_finite() || dlogits.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("backward loss".into()));
    }
    let mut grads = Gradients::zeros_like(model);
    accumulate_backward(model, input, &trace, &dlogits, 1.0, &mut grads);
    Ok((value, grads))
}

/// Anything that maps an input to a class-probability vector.
pub trait Classifier: Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn probabilities(&self, input: &[f64]) -> Result<Vec<f64>>;

    fn predict(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.probabilities(input)?))
    }
}

impl Classifier for MlpModel {
    fn input_dim(&self) -> usize {
        MlpModel::input_dim(self)
    }

    fn num_classes(&self) -> usize {
        self.output_dim()
    }

    fn probabilities(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(math::softmax(&self.logits(input)?))
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
