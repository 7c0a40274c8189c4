//! CSV report files. Each starts with one `#` line naming the config hash and
//! the seeds that produced it.

use std::fs;
use std::path::Path;

use bayes_concepts_core::interaction::{order, sparsity_curve, InteractionTable, MaskContext};
use bayes_concepts_core::oracle::OracleCheck;
use bayes_concepts_core::surrogate::SurrogateFit;

use crate::config::ExperimentConfig;
use crate::{Error, Result};

/// What every report header records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: String,
}

impl Provenance {
    pub fn of(config: &ExperimentConfig) -> Self {
        Self {
            config_hash: config.hash(),
            seeds: config.seed_summary(),
        }
    }

    pub fn line(&self, extra: &str) -> String {
        let mut s = format!("config_hash={} {}", self.config_hash, self.seeds);
        if !extra.is_empty() {
            s.push(' ');
            s.push_str(extra);
        }
        s
    }
}

pub fn write_csv<I>(path: &Path, comment: &str, headers: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let body = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    let mut out = format!("# {comment}\n").into_bytes();
    out.extend_from_slice(&body);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Header names and string cells of a report, comment lines skipped.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((headers, rows))
}

fn f(v: f64) -> String {
    v.to_string()
}

/// Dividend tables of several models and probes sharing one active set.
/// `tables` holds `(model_id, probe, table)`.
pub fn write_interactions(
    path: &Path,
    prov: &Provenance,
    ctx: &MaskContext,
    tables: &[(&str, usize, &InteractionTable)],
    seed: u64,
) -> Result<()> {
    let active: Vec<String> = ctx
        .groups()
        .iter()
        .map(|g| g.iter().map(usize::to_string).collect::<Vec<_>>().join("+"))
        .collect();
    let extra = format!(
        "n_active={} active={} tau={} probe_seed={seed}",
        ctx.n_active(),
        active.join(","),
        ctx.tau()
    );
    let rows = tables.iter().flat_map(|&(model, probe, t)| {
        let raw = t.raw();
        (0..t.len()).map(move |m| {
            vec![
                model.to_string(),
                probe.to_string(),
                format!("{m:x}"),
                order(m).to_string(),
                f(raw[m]),
                f(t.get(m)),
            ]
        })
    });
    write_csv(
        path,
        &prov.line(&extra),
        &["model_id", "probe", "mask_hex", "order", "v_raw", "i_value"],
        rows,
    )
}

/// Sorted dividend magnitudes, `(model_id, probe, table)` as above.
pub fn write_sparsity(path: &Path, prov: &Provenance, tables: &[(&str, usize, &InteractionTable)]) -> Result<()> {
    let rows = tables.iter().flat_map(|&(model, probe, t)| {
        sparsity_curve(t)
            .into_iter()
            .enumerate()
            .map(move |(k, v)| vec![model.to_string(), probe.to_string(), (k + 1).to_string(), f(v)])
    });
    write_csv(path, &prov.line(""), &["model_id", "probe", "rank", "magnitude"], rows)
}

pub fn write_plan(path: &Path, prov: &Provenance, fit: &SurrogateFit) -> Result<()> {
    let rows = fit
        .plan
        .points()
        .iter()
        .enumerate()
        .flat_map(|(l, v)| v.iter().enumerate().map(move |(d, &x)| vec![l.to_string(), d.to_string(), f(x)]));
    write_csv(path, &prov.line(""), &["layer", "dim", "variance"], rows)
}

pub fn write_fit_log(path: &Path, prov: &Provenance, fit: &SurrogateFit) -> Result<()> {
    let rows = fit
        .layers
        .iter()
        .map(|l| vec![l.layer.to_string(), f(l.kl_before), f(l.kl_after), f(l.baseline_kl)]);
    write_csv(path, &prov.line(""), &["layer", "kl_before", "kl_after", "baseline_kl"], rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub order: usize,
    pub value: f64,
    pub draws: usize,
    pub seed: u64,
}

impl MetricRow {
    /// One row per order, `values[s - 1]` at order `s`.
    pub fn series(metric: &str, values: &[f64], draws: usize, seed: u64) -> Vec<MetricRow> {
        values
            .iter()
            .enumerate()
            .map(|(i, &value)| MetricRow {
                metric: metric.into(),
                order: i + 1,
                value,
                draws,
                seed,
            })
            .collect()
    }
}

pub fn write_metrics(path: &Path, prov: &Provenance, rows: &[MetricRow]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|r| vec![r.metric.clone(), r.order.to_string(), f(r.value), r.draws.to_string(), r.seed.to_string()]);
    write_csv(path, &prov.line(""), &["metric_name", "order", "value", "draws", "seed"], rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub model_id: String,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
    pub epsilon: f64,
    pub steps: usize,
}

pub fn write_robustness(path: &Path, prov: &Provenance, rows: &[RobustnessRow]) -> Result<()> {
    let rows = rows.iter().map(|r| {
        vec![
            r.model_id.clone(),
            f(r.clean_accuracy),
            f(r.adversarial_accuracy),
            f(r.epsilon),
            r.steps.to_string(),
        ]
    });
    write_csv(path, &prov.line(""), &["model_id", "clean_acc", "adv_acc", "eps", "steps"], rows)
}

pub fn write_oracles(path: &Path, prov: &Provenance, checks: &[OracleCheck]) -> Result<()> {
    let rows = checks.iter().map(|c| {
        vec![
            c.name.clone(),
            c.parameters.clone(),
            f(c.analytic),
            f(c.mc),
            f(c.tolerance),
            c.pass.to_string(),
        ]
    });
    write_csv(
        path,
        &prov.line(""),
        &["check_name", "parameters", "analytic_value", "mc_value", "tolerance", "pass"],
        rows,
    )
}

/// Outcome of one pass/fail check of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

pub fn write_checks(path: &Path, prov: &Provenance, checks: &[Check]) -> Result<()> {
    let rows = checks
        .iter()
        .map(|c| vec![c.name.clone(), c.pass.to_string(), c.detail.clone()]);
    write_csv(path, &prov.line(""), &["check_name", "pass", "detail"], rows)
}
