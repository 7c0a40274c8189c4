use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use bayes_concepts::pipeline::{prepare_data, run_pipeline, Run};
use bayes_concepts::report::{write_checks, Check};
use bayes_concepts::{init_workers, ExperimentConfig, WORKERS_ENV};
use clap::{Parser, Subcommand};

/// Interactive-concept analysis of small DNNs and mean-field BNNs.
#[derive(Parser)]
#[command(version, after_help = concat!(
    "Config keys are documented in the README; `--set key=value` overrides any of them.\n",
    "The worker-pool size comes from the BNN_CONCEPTS_WORKERS environment variable."
))]
struct Cli {
    /// Flat `key = value` config file; defaults apply to keys it omits.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides one config key, e.g. `--set seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set output_dir=DIR`.
    #[arg(long, short, global = true)]
    out: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or read the dataset and write the normalized splits.
    GenData,
    /// Train the deterministic network.
    TrainDnn,
    /// Train the mean-field Bayesian network.
    TrainBnn,
    /// Dividend tables, sparsity curves, faithfulness and planted ranks.
    Interactions,
    /// Fit the layer-wise perturbation surrogate of the trained BNN.
    SurrogateFit,
    /// Order variance, stability, strength and generalization metrics.
    Metrics,
    /// Closed-form and Monte Carlo oracle checks.
    Oracles,
    /// PGD robustness of the trained models.
    Attack,
    /// Every stage in order.
    Pipeline,
    /// Rebuild the SVG plots from the output directory's CSV files.
    Plot,
    /// Print the resolved config in canonical form.
    ShowConfig,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut overrides = cli.overrides.clone();
    if let Some(out) = &cli.out {
        overrides.push(format!("output_dir={out}"));
    }
    Ok(base.with_overrides(&overrides)?)
}

fn report(checks: &[Check]) -> bool {
    for c in checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().all(|c| c.pass)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    init_workers().with_context(|| format!("reading {WORKERS_ENV}"))?;
    let config = load_config(&cli)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", config.to_text());
        println!("# config_hash={}", config.hash());
        return Ok(true);
    }
    if let Command::Pipeline = cli.command {
        let r = run_pipeline(config)?;
        println!("outputs in {}", r.dir.display());
        return Ok(report(&r.checks));
    }
    let run = Run::create(config)?;
    let checks = match cli.command {
        Command::GenData => {
            let s = run.guarded("gen-data", || run.gen_data())?;
            println!("train rows {}, test rows {}", s.train.len(), s.test.len());
            Vec::new()
        }
        Command::TrainDnn => {
            let t = run.guarded("train-dnn", || run.train_dnn(&prepare_data(&run.config)?))?;
            println!("dnn train accuracy {}", t.log.last().copied().unwrap_or(0.0));
            Vec::new()
        }
        Command::TrainBnn => {
            let t = run.guarded("train-bnn", || run.train_bnn(&prepare_data(&run.config)?))?;
            println!("bnn train accuracy {}", t.log.last().copied().unwrap_or(0.0));
            Vec::new()
        }
        Command::Interactions => run.guarded("interactions", || {
            let (dnn, bnn) = run.load_trained()?;
            run.interactions(&prepare_data(&run.config)?, &dnn.model, &bnn.model)
        })?,
        Command::SurrogateFit => {
            let (fit, check) = run.guarded("surrogate-fit", || {
                let (_, bnn) = run.load_trained()?;
                run.surrogate(&prepare_data(&run.config)?, &bnn.model)
            })?;
            for l in &fit.layers {
                println!(
                    "layer {}: KL {} -> {} (baseline {})",
                    l.layer, l.kl_before, l.kl_after, l.baseline_kl
                );
            }
            vec![check]
        }
        Command::Metrics => {
            let cmp = run.guarded("metrics", || {
                let (dnn, bnn) = run.load_trained()?;
                let cmp = run.comparisons(&dnn, &bnn)?;
                run.metrics(&prepare_data(&run.config)?, &cmp)?;
                Ok(cmp)
            })?;
            let p = cmp.pairing;
            vec![Check::new(
                "comparison3_gap",
                !p.flagged,
                format!("epochs dnn {} / bnn {}, gap {}", p.dnn_epoch, p.bnn_epoch, p.gap),
            )]
        }
        Command::Oracles => vec![run.guarded("oracles", || run.oracles())?],
        Command::Attack => {
            let rows = run.guarded("attack", || {
                let (dnn, bnn) = run.load_trained()?;
                run.attack(&prepare_data(&run.config)?, &dnn.model, &bnn.model)
            })?;
            for r in &rows {
                println!("{}: clean {} adversarial {}", r.model_id, r.clean_accuracy, r.adversarial_accuracy);
            }
            Vec::new()
        }
        Command::Plot => {
            for p in run.guarded("plot", || run.plot())? {
                println!("{}", p.display());
            }
            Vec::new()
        }
        Command::Pipeline | Command::ShowConfig => unreachable!("handled above"),
    };
    if !checks.is_empty() {
        write_checks(&run.path("checks.csv"), run.provenance(), &checks)?;
    }
    Ok(report(&checks))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
