use std::fs;
use std::path::Path;

use bayes_concepts::core::train::match_accuracy;
use bayes_concepts::pipeline::{prepare_data, run_pipeline, Run};
use bayes_concepts::{Error, ExperimentConfig};

fn small(dir: &Path) -> ExperimentConfig {
    let out = format!("output_dir={}", dir.display());
    let keys = [
        "n_samples=400",
        "hidden=8",
        "dnn_epochs=3",
        "bnn_epochs=3",
        "noise_draws=3",
        "weight_draws=3",
        "probes=4",
        "ensemble_size=2",
        "surrogate_draws=16",
        "surrogate_steps=3",
        "surrogate_samples=3",
        "oracle_draws=2000",
        "pgd_steps=2",
        &out,
    ];
    ExperimentConfig::default()
        .with_overrides(&keys.map(String::from))
        .unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "checkpoints"] {
        for e in fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                let mut bytes = fs::read(&p).unwrap();
                if p.ends_with("config.txt") {
                    // The one line that names where the run was written.
                    let text = String::from_utf8(bytes).unwrap();
                    bytes = text.lines().filter(|l| !l.starts_with("output_dir")).collect::<String>().into_bytes();
                }
                out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), bytes));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_pipeline(small(a.path())).unwrap();
    run_pipeline(small(b.path())).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), fb.len());
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs between reruns");
    }
    for name in ["metrics.csv", "interactions.csv", "oracles.csv", "robustness.csv", "checks.csv", "variance.svg"] {
        assert!(fa.iter().any(|(n, _)| n.ends_with(name)), "{name} missing");
    }
    assert_eq!(small(a.path()).hash(), small(b.path()).hash());
    let stamp = format!("config_hash={}", small(a.path()).hash());
    for (name, bytes) in &fa {
        let text = String::from_utf8_lossy(bytes);
        assert!(text.lines().next().unwrap().contains(&stamp), "{name} lacks the config hash");
    }
    assert!(ra.checks.iter().any(|c| c.name == "faithfulness" && c.pass));
}

#[test]
fn test_split_uses_train_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let s = prepare_data(&small(dir.path())).unwrap();
    let norm = s.train.normalization().unwrap();
    assert_eq!(s.test.normalization(), Some(norm));
    for c in 0..s.train.n_features() {
        let col: Vec<f64> = (0..s.train.len()).map(|i| s.train.row(i)[c]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() <= 1e-9 && (var - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn failing_stage_leaves_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path())
        .with_overrides(&["dataset=csv".into(), format!("csv_path={}", dir.path().join("absent.csv").display())])
        .unwrap();
    assert!(matches!(run_pipeline(cfg), Err(Error::Io { .. })));
    let record = fs::read_to_string(dir.path().join("failure.csv")).unwrap();
    assert!(record.lines().nth(2).unwrap().starts_with("gen-data,"));
    assert!(dir.path().join("config.txt").is_file());
}

#[test]
fn stages_without_inputs_name_the_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::create(small(dir.path())).unwrap();
    match run.load_trained() {
        Err(Error::MissingInputs(f)) => assert_eq!(f.len(), 4),
        other => panic!("{:?}", other.map(|_| ())),
    }
}

#[test]
fn identical_logs_pair_equal_epochs() {
    let log = [0.5, 0.7, 0.9, 0.9, 0.95];
    let m = match_accuracy(&log, &log, 0.01).unwrap();
    assert_eq!((m.dnn_epoch, m.bnn_epoch, m.gap, m.flagged), (4, 4, 0.0, false));
}
