//! CSV and JSON writers. Numbers use the shortest representation that
//! parses back to the same value, so equal inputs give identical bytes.

use std::path::Path;

use serde::Serialize;

use crate::failure::Failure;

pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else {
        "NA".into()
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn io(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::spec("unwritable-output", format!("{}: {e}", path.display()))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    w.write_record(header).map_err(|e| io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

/// Wide table: a `t` column followed by one column per name.
pub fn write_wide(path: &Path, names: &[String], labels: &[String], values: &[Vec<Option<f64>>]) -> Result<(), Failure> {
    let mut header = vec!["t"];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = values
        .iter()
        .zip(labels)
        .map(|(r, l)| std::iter::once(l.clone()).chain(r.iter().map(|&v| opt(v))).collect())
        .collect();
    write_csv(path, &header, &rows)
}

#[derive(Debug, Serialize)]
pub struct LogLikFile {
    pub value: f64,
    pub method: String,
    pub nsim: usize,
    pub mc_se: f64,
    pub seed: Option<u64>,
    pub converged: bool,
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io(path, e))
}

/// Sample cross-correlations `corr(x_a[t + lag], x_b[t])` for lags
/// `0..=max_lag`, skipping missing cells and dividing by the full length.
pub fn acf(values: &[Vec<Option<f64>>], max_lag: usize) -> Vec<(usize, usize, usize, Option<f64>)> {
    let n = values.len();
    let k = values.first().map_or(0, Vec::len);
    let stats: Vec<(f64, f64)> = (0..k)
        .map(|a| {
            let xs: Vec<f64> = values.iter().filter_map(|r| r[a]).collect();
            if xs.is_empty() {
                return (0.0, 0.0);
            }
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64)
        })
        .collect();
    let mut out = Vec::new();
    for a in 0..k {
        for b in 0..k {
            for lag in 0..=max_lag.min(n.saturating_sub(1)) {
                let mut c = 0.0;
                for t in 0..n - lag {
                    if let (Some(x), Some(y)) = (values[t + lag][a], values[t][b]) {
                        c += (x - stats[a].0) * (y - stats[b].0);
                    }
                }
                let denom = (stats[a].1 * stats[b].1).sqrt();
                let r = if denom > 0.0 { Some(c / n as f64 / denom) } else { None };
                out.push((lag, a, b, r));
            }
        }
    }
    out
}
