//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, unknown or repeated keys are errors, and `auto` leaves an
//! optional value to be derived. [`ExperimentConfig::hash`] covers every key
//! except `output_dir`, which does not influence any result.

use std::fmt::Display;
use std::path::Path;

use bayes_concepts_core::dataset::SyntheticSpec;
use bayes_concepts_core::rng;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, f64, String);

impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_value(s: &str) -> Option<Self> {
        if s == "auto" {
            Some(None)
        } else {
            T::parse_value(s).map(Some)
        }
    }

    fn render(&self) -> String {
        self.as_ref().map_or_else(|| "auto".into(), T::render)
    }
}

/// Comma-separated list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct List(pub Vec<usize>);

impl ConfigValue for List {
    fn parse_value(s: &str) -> Option<Self> {
        if s.is_empty() {
            return Some(List(Vec::new()));
        }
        s.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>().map(List)
    }

    fn render(&self) -> String {
        join(&self.0, ",")
    }
}

/// Semicolon-separated groups of comma-separated indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups(pub Vec<Vec<usize>>);

impl ConfigValue for Groups {
    fn parse_value(s: &str) -> Option<Self> {
        if s.is_empty() {
            return Some(Groups(Vec::new()));
        }
        s.split(';')
            .map(|g| List::parse_value(g.trim()).map(|l| l.0))
            .collect::<Option<_>>()
            .map(Groups)
    }

    fn render(&self) -> String {
        self.0.iter().map(|g| join(g, ",")).collect::<Vec<_>>().join(";")
    }
}

fn join<T: Display>(v: &[T], sep: &str) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

macro_rules! config_keys {
    ($($(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr;)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct ExperimentConfig {
            $($(#[doc = $doc])* pub $name: $ty,)*
        }

        impl Default for ExperimentConfig {
            fn default() -> Self {
                Self { $($name: $default,)* }
            }
        }

        impl ExperimentConfig {
            /// Every key, in canonical order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];

            /// Assigns one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key {
                    $(stringify!($name) => {
                        self.$name = <$ty as ConfigValue>::parse_value(value)
                            .ok_or_else(|| Error::Config(format!("invalid value `{value}` for `{key}`")))?;
                    })*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// `(key, value)` pairs in canonical order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($name), ConfigValue::render(&self.$name)),)*]
            }
        }
    };
}

config_keys! {
    /// `sparse-and`, `gaussian-blobs` or `csv`.
    dataset: String = "sparse-and".into();
    csv_path: String = String::new();
    n_features: usize = 10;
    n_samples: usize = 4000;
    /// Blobs only.
    n_classes: usize = 2;
    /// Blobs only.
    separation: f64 = 4.0;
    /// Sparse-AND only.
    planted: Groups = Groups(vec![vec![1, 2], vec![5, 6, 7]]);
    /// Sparse-AND only; `0` keeps features continuous.
    grid: f64 = 0.5;
    test_fraction: f64 = 0.25;
    /// Hidden widths; input and output widths follow the data.
    hidden: List = List(vec![32, 32]);
    dnn_learning_rate: f64 = 0.001;
    dnn_epochs: usize = 100;
    dnn_batch_size: usize = 32;
    bnn_learning_rate: f64 = 0.001;
    bnn_epochs: usize = 100;
    bnn_batch_size: usize = 32;
    bnn_initial_sigma: f64 = 0.05;
    bnn_mc_samples: usize = 1;
    /// `auto` means one over the number of batches.
    bnn_kl_weight: Option<f64> = None;
    bnn_eval_samples: usize = 10;
    tau: f64 = 0.5;
    noise_variance: f64 = 0.0025;
    noise_draws: usize = 100;
    weight_draws: usize = 100;
    /// `auto` means all features up to 16, else 12.
    n_active: Option<usize> = None;
    salient_threshold: f64 = 0.05;
    /// Samples explained per model.
    probes: usize = 20;
    /// Sampled networks behind a BNN's output score.
    ensemble_size: usize = 10;
    surrogate_draws: usize = 256;
    surrogate_steps: usize = 500;
    surrogate_learning_rate: f64 = 0.01;
    surrogate_samples: usize = 20;
    pgd_epsilon: f64 = 0.1;
    pgd_steps: usize = 20;
    pgd_step_size: f64 = 0.01;
    oracle_draws: usize = 1_000_000;
    /// Largest train-accuracy gap, as a fraction, for matched checkpoints.
    match_tolerance: f64 = 0.01;
    seed: u64 = 1;
    data_seed: Option<u64> = None;
    init_seed: Option<u64> = None;
    train_seed: Option<u64> = None;
    probe_seed: Option<u64> = None;
    noise_seed: Option<u64> = None;
    surrogate_seed: Option<u64> = None;
    attack_seed: Option<u64> = None;
    oracle_seed: Option<u64> = None;
    output_dir: String = "out".into();
}

/// Stochastic stages of a run, each with its own seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    Init,
    Train,
    Probe,
    Noise,
    Surrogate,
    Attack,
    Oracle,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Data,
        Stage::Init,
        Stage::Train,
        Stage::Probe,
        Stage::Noise,
        Stage::Surrogate,
        Stage::Attack,
        Stage::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Init => "init",
            Stage::Train => "train",
            Stage::Probe => "probe",
            Stage::Noise => "noise",
            Stage::Surrogate => "surrogate",
            Stage::Attack => "attack",
            Stage::Oracle => "oracle",
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `key = value`"))?;
            let key = key.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::parse(origin, i + 1, format!("`{key}` given twice")));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::parse(origin, i + 1, m),
                other => other,
            })?;
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Applies `key=value` overrides in order, then validates.
    pub fn with_overrides(mut self, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        self.validate()?;
        Ok(self)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical text, `output_dir` excluded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "output_dir" {
                h.update(format!("{k} = {v}\n").as_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        let explicit = match stage {
            Stage::Data => self.data_seed,
            Stage::Init => self.init_seed,
            Stage::Train => self.train_seed,
            Stage::Probe => self.probe_seed,
            Stage::Noise => self.noise_seed,
            Stage::Surrogate => self.surrogate_seed,
            Stage::Attack => self.attack_seed,
            Stage::Oracle => self.oracle_seed,
        };
        explicit.unwrap_or_else(|| rng::derive(self.seed, 100 + stage as u64))
    }

    /// `name=seed` for every stage, as recorded in report headers.
    pub fn seed_summary(&self) -> String {
        Stage::ALL
            .iter()
            .map(|&s| format!("{}_seed={}", s.name(), self.stage_seed(s)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn n_active(&self, n_features: usize) -> usize {
        self.n_active
            .unwrap_or_else(|| bayes_concepts_core::interaction::default_n_active(n_features))
    }

    /// The generator for synthetic datasets, `None` for CSV input.
    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match self.dataset.as_str() {
            "sparse-and" => Some(SyntheticSpec::SparseAnd {
                n_features: self.n_features,
                n_samples: self.n_samples,
                planted: self.planted.0.clone(),
                grid: self.grid,
            }),
            "gaussian-blobs" => Some(SyntheticSpec::GaussianBlobs {
                n_features: self.n_features,
                n_classes: self.n_classes,
                n_samples: self.n_samples,
                separation: self.separation,
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        match self.dataset.as_str() {
            "sparse-and" | "gaussian-blobs" => {}
            "csv" if !self.csv_path.is_empty() => {}
            "csv" => return bad("dataset = csv needs csv_path"),
            other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.noise_variance > 0.0) || self.noise_variance.sqrt() >= self.tau {
            return bad("noise_variance must be positive with its standard deviation below tau");
        }
        if !(self.salient_threshold > 0.0 && self.salient_threshold <= 1.0) {
            return bad("salient_threshold must lie in (0, 1]");
        }
        if self.probes == 0 || self.ensemble_size == 0 || self.surrogate_samples == 0 {
            return bad("probes, ensemble_size and surrogate_samples must be positive");
        }
        if self.noise_draws < 2 || self.weight_draws < 2 || self.surrogate_draws < 2 {
            return bad("noise_draws, weight_draws and surrogate_draws need at least 2");
        }
        if self.dataset != "csv" {
            if let Some(n) = self.n_active {
                if n == 0 || n > self.n_features.min(bayes_concepts_core::interaction::MAX_ACTIVE) {
                    return bad("n_active must lie in 1..=min(n_features, 20)");
                }
            }
        }
        if self.hidden.0.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}
