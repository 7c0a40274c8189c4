//! Plain-text model checkpoints.
//!
//! ```text
//! mlp-checkpoint v1
//! widths 10 32 2
//! layer relu
//! weight <rows*cols values, row-major>
//! bias <rows values>
//! layer identity
//! ...
//! ```
//!
//! Lines starting with `#` are comments. BNN files start with
//! `bnn-checkpoint v1` and carry `weight_mean`,
//! `weight_rho`, `bias_mean` and `bias_rho` lines per layer. Values are
//! written in Rust's shortest round-trip form, so a load returns the saved
//! model bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bayes_concepts_core::bnn::{BnnModel, MeanFieldLayer};
use bayes_concepts_core::nn::{Activation, DenseLayer, MlpModel};
use bayes_concepts_core::Tensor;

use crate::{Error, Result};

const MLP_MAGIC: &str = "mlp-checkpoint v1";
const BNN_MAGIC: &str = "bnn-checkpoint v1";

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Identity => "identity",
    }
}

fn push_values(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        write!(out, " {v}").expect("writing to a String");
    }
    out.push('\n');
}

fn push_header(out: &mut String, magic: &str, widths: &[usize]) {
    out.push_str(magic);
    out.push_str("\nwidths");
    for w in widths {
        write!(out, " {w}").expect("writing to a String");
    }
    out.push('\n');
}

pub fn mlp_to_string(model: &MlpModel) -> String {
    let mut out = String::new();
    push_header(&mut out, MLP_MAGIC, &model.widths());
    for l in model.layers() {
        writeln!(out, "layer {}", activation_name(l.activation())).expect("writing to a String");
        push_values(&mut out, "weight", l.weight().data());
        push_values(&mut out, "bias", l.bias().data());
    }
    out
}

pub fn bnn_to_string(model: &BnnModel) -> String {
    let mut out = String::new();
    push_header(&mut out, BNN_MAGIC, &model.widths());
    for l in model.layers() {
        writeln!(out, "layer {}", activation_name(l.activation())).expect("writing to a String");
        push_values(&mut out, "weight_mean", l.weight_mean().data());
        push_values(&mut out, "weight_rho", l.weight_rho().data());
        push_values(&mut out, "bias_mean", l.bias_mean().data());
        push_values(&mut out, "bias_rho", l.bias_rho().data());
    }
    out
}

/// Line cursor that reports 1-based positions.
struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Self {
            path,
            iter: text.lines().enumerate(),
            line: 0,
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(self.path, self.line, message)
    }

    fn next_line(&mut self) -> Result<&'a str> {
        loop {
            match self.iter.next() {
                Some((_, l)) if l.starts_with('#') => {}
                Some((i, l)) => {
                    self.line = i + 1;
                    return Ok(l);
                }
                None => {
                    self.line += 1;
                    return Err(self.err("unexpected end of file"));
                }
            }
        }
    }

    /// The words after `key` on the next line.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut words = line.split_ascii_whitespace();
        match words.next() {
            Some(k) if k == key => Ok(words.collect()),
            other => Err(self.err(format!("expected `{key}`, found `{}`", other.unwrap_or("")))),
        }
    }

    fn values(&mut self, key: &str, expected: usize) -> Result<Vec<f64>> {
        let words = self.keyed(key)?;
        if words.len() != expected {
            return Err(self.err(format!("`{key}` needs {expected} values, found {}", words.len())));
        }
        words
            .iter()
            .map(|w| w.parse::<f64>().map_err(|_| self.err(format!("`{w}` is not a number"))))
            .collect()
    }

    fn finish(&mut self) -> Result<()> {
        for (i, l) in self.iter.by_ref() {
            if !l.trim().is_empty() && !l.starts_with('#') {
                self.line = i + 1;
                return Err(self.err("trailing content"));
            }
        }
        Ok(())
    }
}

fn read_header<'a>(lines: &mut Lines<'a>, magic: &str) -> Result<Vec<usize>> {
    let first = lines.next_line()?;
    if first.trim() != magic {
        return Err(lines.err(format!("expected `{magic}`")));
    }
    let widths: Vec<usize> = lines
        .keyed("widths")?
        .iter()
        .map(|w| w.parse().map_err(|_| lines.err(format!("`{w}` is not a width"))))
        .collect::<Result<_>>()?;
    if widths.len() < 2 {
        return Err(lines.err("need at least two widths"));
    }
    Ok(widths)
}

fn read_activation(lines: &mut Lines<'_>) -> Result<Activation> {
    let words = lines.keyed("layer")?;
    match words.as_slice() {
        ["relu"] => Ok(Activation::Relu),
        ["identity"] => Ok(Activation::Identity),
        _ => Err(lines.err("unknown activation")),
    }
}

pub fn mlp_from_str(path: &Path, text: &str) -> Result<MlpModel> {
    let mut lines = Lines::new(path, text);
    let widths = read_header(&mut lines, MLP_MAGIC)?;
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for w in widths.windows(2) {
        let act = read_activation(&mut lines)?;
        let weight = lines.values("weight", w[0] * w[1])?;
        let bias = lines.values("bias", w[1])?;
        layers.push(DenseLayer::new(Tensor::matrix(w[1], w[0], weight)?, Tensor::vector(bias)?, act)?);
    }
    lines.finish()?;
    Ok(MlpModel::new(layers)?)
}

pub fn bnn_from_str(path: &Path, text: &str) -> Result<BnnModel> {
    let mut lines = Lines::new(path, text);
    let widths = read_header(&mut lines, BNN_MAGIC)?;
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for w in widths.windows(2) {
        let act = read_activation(&mut lines)?;
        let wm = lines.values("weight_mean", w[0] * w[1])?;
        let wr = lines.values("weight_rho", w[0] * w[1])?;
        let bm = lines.values("bias_mean", w[1])?;
        let br = lines.values("bias_rho", w[1])?;
        layers.push(MeanFieldLayer::new(
            Tensor::matrix(w[1], w[0], wm)?,
            Tensor::matrix(w[1], w[0], wr)?,
            Tensor::vector(bm)?,
            Tensor::vector(br)?,
            act,
        )?);
    }
    lines.finish()?;
    Ok(BnnModel::new(layers)?)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, comment: &str, text: &str) -> Result<()> {
    let body = if comment.is_empty() {
        text.to_string()
    } else {
        format!("# {comment}\n{text}")
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Writes `model`, preceded by `# comment` unless `comment` is empty.
pub fn save_mlp(path: &Path, model: &MlpModel, comment: &str) -> Result<()> {
    write(path, comment, &mlp_to_string(model))
}

pub fn save_bnn(path: &Path, model: &BnnModel, comment: &str) -> Result<()> {
    write(path, comment, &bnn_to_string(model))
}

pub fn load_mlp(path: &Path) -> Result<MlpModel> {
    mlp_from_str(path, &read(path)?)
}

pub fn load_bnn(path: &Path) -> Result<BnnModel> {
    bnn_from_str(path, &read(path)?)
}

/// Either kind of checkpoint as a deterministic network; a BNN contributes
/// its mean weights.
pub fn load_mean_model(path: &Path) -> Result<MlpModel> {
    let text = read(path)?;
    let first = text.lines().find(|l| !l.starts_with('#')).unwrap_or("");
    if first.trim() == BNN_MAGIC {
        Ok(bnn_from_str(path, &text)?.mean_model())
    } else {
        mlp_from_str(path, &text)
    }
}
