//! Standalone SVG line charts rebuilt from a report directory's CSV files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::report::read_csv;
use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Renders one chart. With `log_y` the axis shows `log10(y)` and points with
/// `y <= 0` are dropped; non-finite points are always dropped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let map_y = |y: f64| if log_y { y.log10() } else { y };
    let kept: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
                .map(|&(x, y)| (x, map_y(y)))
                .collect()
        })
        .collect();
    let all = kept.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut svg = String::new();
    let w = &mut svg;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(w, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
    writeln!(
        w,
        r#"<path d="M{m:.2},{t:.2} L{m:.2},{b:.2} L{r:.2},{b:.2}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    )
    .unwrap();
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let ylab = if log_y { format!("1e{fy:.1}") } else { format!("{fy:.3}") };
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{fx:.1}</text>"#,
            px(fx),
            HEIGHT - MARGIN + 18.0
        )
        .unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{ylab}</text>"#, MARGIN - 6.0, py(fy) + 4.0).unwrap();
    }
    writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (i, (s, pts)) in series.iter().zip(&kept).enumerate() {
        let color = COLORS[i % COLORS.len()];
        if !pts.is_empty() {
            let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            writeln!(w, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, d.join(" ")).unwrap();
        }
        let ly = MARGIN + 16.0 * i as f64;
        writeln!(
            w,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 150.0,
            escape(&s.name)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn column(headers: &[String], name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(path, 2, format!("missing column `{name}`")))
}

fn number(cell: &str, path: &Path, row: usize) -> Result<f64> {
    cell.parse()
        .map_err(|_| Error::parse(path, row + 3, format!("`{cell}` is not a number")))
}

/// Per-metric `(order, value)` series whose names start with `prefix`, in
/// first-seen order.
fn metric_series(path: &Path, prefix: &str) -> Result<Vec<Series>> {
    let (headers, rows) = read_csv(path)?;
    let (m, o, v) = (
        column(&headers, "metric_name", path)?,
        column(&headers, "order", path)?,
        column(&headers, "value", path)?,
    );
    let mut out: Vec<Series> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if !r[m].starts_with(prefix) {
            continue;
        }
        let point = (number(&r[o], path, i)?, number(&r[v], path, i)?);
        match out.iter_mut().find(|s| s.name == r[m]) {
            Some(s) => s.points.push(point),
            None => out.push(Series {
                name: r[m].clone(),
                points: vec![point],
            }),
        }
    }
    Ok(out)
}

/// Mean sorted magnitude per rank, one series per model.
fn sparsity_series(path: &Path) -> Result<Vec<Series>> {
    let (headers, rows) = read_csv(path)?;
    let (m, k, v) = (
        column(&headers, "model_id", path)?,
        column(&headers, "rank", path)?,
        column(&headers, "magnitude", path)?,
    );
    // (model, per-rank sums, per-rank counts)
    let mut acc: Vec<(String, Vec<f64>, Vec<usize>)> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let rank = number(&r[k], path, i)?;
        if !(rank >= 1.0 && rank.fract() == 0.0) {
            return Err(Error::parse(path, i + 3, format!("bad rank `{}`", r[k])));
        }
        let idx = rank as usize - 1;
        let value = number(&r[v], path, i)?;
        let entry = match acc.iter().position(|e| e.0 == r[m]) {
            Some(p) => &mut acc[p],
            None => {
                acc.push((r[m].clone(), Vec::new(), Vec::new()));
                acc.last_mut().expect("just pushed")
            }
        };
        if entry.1.len() <= idx {
            entry.1.resize(idx + 1, 0.0);
            entry.2.resize(idx + 1, 0);
        }
        entry.1[idx] += value;
        entry.2[idx] += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(name, sums, counts)| Series {
            name,
            points: sums
                .iter()
                .zip(&counts)
                .enumerate()
                .filter(|(_, (_, &c))| c > 0)
                .map(|(i, (s, &c))| ((i + 1) as f64, s / c as f64))
                .collect(),
        })
        .collect())
}

/// The first line of a report, if it is a comment.
fn provenance(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .unwrap_or("")
        .to_string())
}

/// Writes `sparsity.svg`, `variance.svg`, `stability.svg` and `strength.svg`
/// into `dir` from its `sparsity.csv` and `metrics.csv`.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let sparsity = dir.join("sparsity.csv");
    let metrics = dir.join("metrics.csv");
    let missing: Vec<String> = [&sparsity, &metrics]
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    let charts = [
        (
            "sparsity.svg",
            line_chart("Mean dividend magnitude by rank", "rank", "|I(S)|", &sparsity_series(&sparsity)?, false),
        ),
        (
            "variance.svg",
            line_chart("Variance of dividends by order", "order s", "V(s)", &metric_series(&metrics, "V_")?, true),
        ),
        (
            "stability.svg",
            line_chart("Relative stability by order", "order s", "K(s)", &metric_series(&metrics, "K_")?, true),
        ),
        (
            "strength.svg",
            line_chart("Mean dividend strength by order", "order s", "I_strength(s)", &metric_series(&metrics, "strength.")?, true),
        ),
    ];
    let stamp = format!("<!-- {} -->\n", provenance(&metrics)?.replace("--", "- -"));
    let mut out = Vec::with_capacity(charts.len());
    for (name, svg) in charts {
        let path = dir.join(name);
        fs::write(&path, format!("{stamp}{svg}")).map_err(|e| Error::io(&path, e))?;
        out.push(path);
    }
    Ok(out)
}
