//! CSV ingestion: header row, RFC-4180 quoting, `.` decimals, missing as
//! an empty field or `NA`.

use std::path::Path;

use crate::failure::Failure;

#[derive(Debug, Clone)]
pub struct Table {
    pub source: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let source = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Failure::spec("unreadable-data", format!("{source}: {e}")))?;
        let headers = rdr
            .headers()
            .map_err(|e| Failure::spec("invalid-csv", format!("{source}: {e}")))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()
            .map_err(|e| Failure::spec("invalid-csv", format!("{source}: {e}")))?;
        Ok(Table { source, headers, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn has(&self, col: &str) -> bool {
        self.headers.iter().any(|h| h == col)
    }

    fn position(&self, col: &str) -> Result<usize, Failure> {
        self.headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Failure::spec("column-not-found", format!("column '{col}' not in {}", self.source)))
    }

    pub fn text(&self, col: &str) -> Result<Vec<String>, Failure> {
        let j = self.position(col)?;
        Ok(self.rows.iter().map(|r| r.get(j).map(|s| s.trim().to_string()).unwrap_or_default()).collect())
    }

    pub fn column(&self, col: &str) -> Result<Vec<Option<f64>>, Failure> {
        let j = self.position(col)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(t, r)| {
                let cell = r.get(j).map(|s| s.trim()).unwrap_or("");
                if cell.is_empty() || cell == "NA" {
                    return Ok(None);
                }
                cell.parse::<f64>().map(Some).map_err(|_| {
                    Failure::spec("invalid-number", format!("{}: row {}, column '{col}': '{cell}'", self.source, t + 1))
                })
            })
            .collect()
    }

    /// A column without missing cells, truncated or checked to `rows`.
    pub fn complete(&self, col: &str, rows: usize) -> Result<Vec<f64>, Failure> {
        let vals = self.column(col)?;
        if vals.len() < rows {
            return Err(Failure::spec("missing-value", format!("column '{col}' has {} rows, need {rows}", vals.len())));
        }
        vals[..rows]
            .iter()
            .enumerate()
            .map(|(t, v)| v.ok_or_else(|| Failure::spec("missing-value", format!("column '{col}' is missing at row {}", t + 1))))
            .collect()
    }

    pub fn covariate(&self, col: &str, rows: usize) -> Result<Vec<f64>, Failure> {
        self.complete(col, rows)
    }

    /// Rows of `other` appended, matched by column name; columns absent
    /// from `other` are left empty.
    pub fn append(&self, other: &Table) -> Table {
        let idx: Vec<Option<usize>> = self.headers.iter().map(|h| other.headers.iter().position(|o| o == h)).collect();
        let mut rows = self.rows.clone();
        for r in &other.rows {
            rows.push(idx.iter().map(|j| j.and_then(|j| r.get(j).cloned()).unwrap_or_default()).collect());
        }
        Table {
            source: format!("{} + {}", self.source, other.source),
            headers: self.headers.clone(),
            rows,
        }
    }

    /// `rows` empty rows appended.
    pub fn extend_empty(&self, rows: usize) -> Table {
        let mut out = self.clone();
        out.rows.extend((0..rows).map(|_| vec![String::new(); self.headers.len()]));
        out
    }
}
