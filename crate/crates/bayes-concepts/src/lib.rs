//! File formats, experiment pipelines and the command-line front end for
//! [`bayes_concepts_core`].
//!
//! A run reads one flat `key = value` config, writes every artifact into its
//! output directory and stamps each file with the config hash and the seed of
//! every stochastic stage, so equal configs give byte-identical outputs.

pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod pipeline;
pub mod plot;
pub mod report;

pub use bayes_concepts_core as core;
pub use config::ExperimentConfig;
pub use error::{Error, Result};

/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "BNN_CONCEPTS_WORKERS";

/// Sizes the global worker pool from [`WORKERS_ENV`]; unset or `0` keeps the
/// default of one worker per core. Results do not depend on the pool size.
pub fn init_workers() -> Result<()> {
    let n = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a worker count, got `{v}`")))?,
        Err(_) => 0,
    };
    // A pool that already exists (e.g. in tests) is fine as it is.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
