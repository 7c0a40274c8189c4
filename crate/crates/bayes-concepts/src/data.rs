//! Dataset CSV files: a header row, numeric feature columns and an integer
//! label in the last column. Lines starting with `#` are comments.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use bayes_concepts_core::dataset::Dataset;

use crate::{Error, Result};

/// Reads a dataset without touching its values.
pub fn read_csv_raw(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header_len = match reader.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.len(),
        Ok(_) => return Err(Error::parse(path, 1, "missing header row")),
        Err(e) => return Err(csv_error(path, e)),
    };
    if header_len < 2 {
        return Err(Error::parse(path, 1, "need at least one feature column and a label column"));
    }
    let n_features = header_len - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header_len {
            return Err(Error::parse(
                path,
                line,
                format!("expected {header_len} fields, found {}", record.len()),
            ));
        }
        for (col, cell) in record.iter().take(n_features).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(path, line, format!("column {}: `{cell}` is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(Error::parse(path, line, format!("column {}: non-finite value", col + 1)));
            }
            features.push(v);
        }
        let cell = &record[n_features];
        let label: usize = cell
            .parse()
            .map_err(|_| Error::parse(path, line, format!("unknown label `{cell}`")))?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::parse(path, 2, "no data rows"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Ok(Dataset::new(n_features, n_classes, features, labels)?)
}

/// Reads a dataset and standardises every column with its own statistics.
pub fn ingest_csv(path: &Path) -> Result<Dataset> {
    let raw = read_csv_raw(path)?;
    let norm = raw.fit_normalization();
    Ok(raw.normalized_with(&norm)?)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(path, line, e.to_string())
}

/// Writes `data` with columns `x0..x{n-1},label`, preceded by `comment` lines.
pub fn write_dataset_csv(path: &Path, data: &Dataset, comment: &[String]) -> Result<()> {
    let mut out = String::new();
    for c in comment {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    let names: Vec<String> = (0..data.n_features()).map(|i| format!("x{i}")).collect();
    out.push_str(&names.join(","));
    out.push_str(",label\n");
    for i in 0..data.len() {
        for v in data.row(i) {
            out.push_str(&v.to_string());
            out.push(',');
        }
        out.push_str(&data.label(i).to_string());
        out.push('\n');
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
