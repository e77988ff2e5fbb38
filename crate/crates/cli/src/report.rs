//! Aggregation of per-seed metrics CSVs into mean/min/max learning curves.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use metalabel_core::Error;

struct MetricsFile {
    path: PathBuf,
    columns: Vec<String>,
    /// rows[epoch][column]: None for empty cells.
    rows: Vec<Vec<Option<f64>>>,
}

fn read_metrics(path: &Path) -> Result<MetricsFile, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        msg: format!("{}: empty metrics file", path.display()),
    })?;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    if columns.first().map(String::as_str) != Some("epoch") {
        return Err(Error::Parse {
            line: 1,
            msg: format!("{}: first column must be epoch", path.display()),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!(
                    "{}: expected {} fields, got {}",
                    path.display(),
                    columns.len(),
                    fields.len()
                ),
            });
        }
        let mut row = Vec::with_capacity(fields.len());
        for f in fields {
            if f.is_empty() {
                row.push(None);
            } else {
                row.push(Some(f.parse::<f64>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("{}: bad value {f:?}", path.display()),
                })?));
            }
        }
        rows.push(row);
    }
    Ok(MetricsFile {
        path: path.to_path_buf(),
        columns,
        rows,
    })
}

/// Merges several metrics files with identical schemas, emitting mean, min
/// and max per epoch per column.
pub fn aggregate(inputs: &[PathBuf], out: &Path) -> Result<ExitCode, Error> {
    let files: Vec<MetricsFile> = inputs
        .iter()
        .map(|p| read_metrics(p))
        .collect::<Result<_, _>>()?;
    let first = &files[0];
    for f in &files[1..] {
        if f.columns != first.columns {
            return Err(Error::InvalidInput(format!(
                "column sets differ: {} has [{}], {} has [{}]",
                first.path.display(),
                first.columns.join(" "),
                f.path.display(),
                f.columns.join(" ")
            )));
        }
        if f.rows.len() != first.rows.len() {
            return Err(Error::InvalidInput(format!(
                "{} has {} epochs but {} has {}",
                first.path.display(),
                first.rows.len(),
                f.path.display(),
                f.rows.len()
            )));
        }
    }

    let mut text = String::from("epoch");
    for col in &first.columns[1..] {
        text.push_str(&format!(",{col}_mean,{col}_min,{col}_max"));
    }
    text.push('\n');

    for (e, row) in first.rows.iter().enumerate() {
        let epoch = row[0].unwrap_or(e as f64);
        text.push_str(&format!("{epoch}"));
        for c in 1..first.columns.len() {
            let values: Vec<f64> = files.iter().filter_map(|f| f.rows[e][c]).collect();
            if values.is_empty() {
                text.push_str(",,,");
            } else {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                text.push_str(&format!(",{mean},{min},{max}"));
            }
        }
        text.push('\n');
    }
    std::fs::write(out, text).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    println!(
        "aggregated {} files over {} epochs -> {}",
        files.len(),
        first.rows.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}
