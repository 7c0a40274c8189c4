use std::path::Path;

use bayes_concepts::config::Stage;
use bayes_concepts::{Error, ExperimentConfig};

fn parse(text: &str) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::parse(text, Path::new("test.cfg"))
}

#[test]
fn empty_file_gives_the_defaults() {
    assert_eq!(parse("# nothing\n\n").unwrap(), ExperimentConfig::default());
}

#[test]
fn canonical_text_round_trips() {
    let c = parse("seed = 9\nhidden = 8, 4\nplanted = 0,1;3,4,5\nn_active = 6\nbnn_kl_weight = 0.5\n").unwrap();
    assert_eq!(c.hidden.0, vec![8, 4]);
    assert_eq!(c.planted.0, vec![vec![0, 1], vec![3, 4, 5]]);
    assert_eq!(parse(&c.to_text()).unwrap(), c);
}

#[test]
fn unknown_repeated_and_invalid_keys_are_errors() {
    assert!(matches!(parse("sede = 3\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(parse("seed = 3\n\nseed = 4\n"), Err(Error::Parse { line: 3, .. })));
    assert!(matches!(parse("seed = three\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(parse("just words\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(parse("noise_variance = 0.5\n"), Err(Error::Config(_))));
    assert!(matches!(parse("dataset = csv\n"), Err(Error::Config(_))));
    assert!(ExperimentConfig::default().with_overrides(&["nope=1".into()]).is_err());
}

#[test]
fn hash_ignores_only_the_output_directory() {
    let base = ExperimentConfig::default();
    assert_eq!(base.hash().len(), 16);
    assert_eq!(base.hash(), ExperimentConfig::default().hash());
    let moved = base.clone().with_overrides(&["output_dir=elsewhere".into()]).unwrap();
    assert_eq!(moved.hash(), base.hash());
    let reseeded = base.clone().with_overrides(&["seed=2".into()]).unwrap();
    assert_ne!(reseeded.hash(), base.hash());
}

#[test]
fn every_stage_has_a_seed_and_overrides_win() {
    let c = ExperimentConfig::default();
    let seeds: Vec<u64> = Stage::ALL.iter().map(|&s| c.stage_seed(s)).collect();
    for (i, a) in seeds.iter().enumerate() {
        assert!(seeds[i + 1..].iter().all(|b| b != a));
    }
    let c = c.with_overrides(&["noise_seed=77".into()]).unwrap();
    assert_eq!(c.stage_seed(Stage::Noise), 77);
    assert!(c.seed_summary().contains("noise_seed=77"));
    assert_eq!(c.stage_seed(Stage::Data), seeds[0]);
}
