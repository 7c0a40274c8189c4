use std::fs;

use bayes_concepts::plot::{emit_plots, line_chart, Series};
use bayes_concepts::report::{write_csv, write_metrics, MetricRow, Provenance};
use bayes_concepts::Error;

fn prov() -> Provenance {
    Provenance {
        config_hash: "0123456789abcdef".into(),
        seeds: "seed=1".into(),
    }
}

fn bundle(dir: &std::path::Path) {
    let mut rows = Vec::new();
    for (probe, curve) in [[3.0, 2.0, 0.5, 0.1], [4.0, 1.0, 1.0, 0.0]].iter().enumerate() {
        for (k, v) in curve.iter().enumerate() {
            rows.push(vec!["dnn".into(), probe.to_string(), (k + 1).to_string(), v.to_string()]);
        }
    }
    write_csv(&dir.join("sparsity.csv"), "test", &["model_id", "probe", "rank", "magnitude"], rows).unwrap();
    let mut m = MetricRow::series("V_noise.dnn", &[0.1, 0.0, f64::NAN, 1.0, -1.0], 10, 3);
    m.extend(MetricRow::series("K_noise.dnn", &[5.0, 3.0, f64::INFINITY], 10, 3));
    m.extend(MetricRow::series("strength.cmp1.dnn", &[1.0, 0.5], 10, 3));
    write_metrics(&dir.join("metrics.csv"), &prov(), &m).unwrap();
}

/// `(x, y)` pixel pairs of every polyline.
fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
    svg.lines()
        .filter_map(|l| l.split("points=\"").nth(1))
        .map(|rest| {
            rest.split('"').next().unwrap().split(' ').map(|p| {
                let (x, y) = p.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect()
        })
        .collect()
}

#[test]
fn missing_inputs_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    match emit_plots(dir.path()) {
        Err(Error::MissingInputs(files)) => {
            assert_eq!(files.len(), 2);
            assert!(files[0].ends_with("sparsity.csv") && files[1].ends_with("metrics.csv"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn sparsity_curve_never_rises() {
    let dir = tempfile::tempdir().unwrap();
    bundle(dir.path());
    emit_plots(dir.path()).unwrap();
    let svg = fs::read_to_string(dir.path().join("sparsity.svg")).unwrap();
    let lines = polylines(&svg);
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0].len(), 4);
    // Larger magnitudes sit higher, i.e. at smaller y.
    assert!(lines[0].windows(2).all(|w| w[1].1 >= w[0].1 && w[1].0 > w[0].0));
}

#[test]
fn log_scale_drops_values_it_cannot_place() {
    let dir = tempfile::tempdir().unwrap();
    bundle(dir.path());
    emit_plots(dir.path()).unwrap();
    for name in ["variance.svg", "stability.svg", "strength.svg"] {
        let svg = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(!svg.contains("NaN") && !svg.contains("inf"), "{name}");
        for line in polylines(&svg) {
            assert!(line.iter().all(|(x, y)| x.is_finite() && y.is_finite()));
        }
    }
    let v = polylines(&fs::read_to_string(dir.path().join("variance.svg")).unwrap());
    assert_eq!(v[0].len(), 2);
}

#[test]
fn identical_bundles_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    bundle(a.path());
    bundle(b.path());
    let pa = emit_plots(a.path()).unwrap();
    emit_plots(b.path()).unwrap();
    for p in pa {
        let name = p.file_name().unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
    let svg = fs::read_to_string(a.path().join("variance.svg")).unwrap();
    assert!(svg.starts_with("<!-- config_hash=0123456789abcdef"));
}

#[test]
fn empty_chart_is_still_well_formed() {
    let svg = line_chart("t", "x", "y", &[Series { name: "none".into(), points: vec![(1.0, 0.0)] }], true);
    assert!(svg.ends_with("</svg>\n"));
    assert!(polylines(&svg).is_empty());
}
