//! Numerics for measuring the interactive concepts encoded by small dense
//! networks.
//!
//! The crate covers deterministic MLPs and mean-field variational Bayesian
//! networks, exact Harsanyi-dividend tables over the subset lattice of input
//! variables, a perturbation-based surrogate of a Bayesian network, the
//! order-indexed sensitivity metrics built on top of those tables, and a set
//! of Monte-Carlo and closed-form oracles for the underlying theory.
//!
//! Everything here is `no_std` + `alloc`. IO, file formats and the CLI live in
//! the `bayes-concepts` companion crate. Enabling the `parallel` feature fans
//! mask and Monte-Carlo evaluation out over rayon; reductions always run in a
//! fixed order, so results are bit-identical with or without it.

#![no_std]

extern crate alloc;

pub mod attack;
pub mod bnn;
pub mod dataset;
mod error;
pub mod interaction;
pub mod linalg;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod oracle;
mod par;
pub mod rng;
pub mod stats;
pub mod surrogate;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
