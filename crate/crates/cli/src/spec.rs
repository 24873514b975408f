//! JSON model specification and its translation into library components.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use ssmkit::builders::{
    build_arima, build_cycle, build_regression, build_seasonal, build_trend, estimate_arima_coefficients, ComponentSpec, Cov,
};
use ssmkit::inference::Optimizer;
use ssmkit::{Distribution, Matrix};

use crate::data::Table;
use crate::failure::Failure;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub data: DataSpec,
    #[serde(default)]
    pub distributions: Vec<String>,
    pub components: Vec<ComponentFile>,
    /// Observation noise covariance; defaults to unknown variances on the
    /// Gaussian series.
    #[serde(default)]
    pub h: Option<CovFile>,
    #[serde(default)]
    pub fit: FitFile,
    #[serde(default)]
    pub horizon: Option<HorizonFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub path: String,
    pub series: Vec<String>,
    /// Exposure column per series; `null` where a series has none.
    #[serde(default)]
    pub exposure: Vec<Option<String>>,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub time: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ComponentFile {
    Trend {
        name: Option<String>,
        #[serde(default = "one")]
        degree: usize,
        #[serde(default)]
        q: Vec<CovFile>,
        series: Option<Vec<String>>,
        #[serde(default)]
        common: bool,
    },
    Seasonal {
        name: Option<String>,
        period: usize,
        #[serde(default)]
        trigonometric: bool,
        q: Option<CovFile>,
        series: Option<Vec<String>>,
        #[serde(default)]
        common: bool,
    },
    Cycle {
        name: Option<String>,
        period: f64,
        q: Option<CovFile>,
        series: Option<Vec<String>>,
        #[serde(default)]
        common: bool,
    },
    Arima {
        name: Option<String>,
        #[serde(default)]
        ar: Vec<f64>,
        #[serde(default)]
        ma: Vec<f64>,
        #[serde(default)]
        d: usize,
        q: Option<CovFile>,
        #[serde(default = "yes")]
        stationary: bool,
        #[serde(default)]
        estimate_ar: bool,
        #[serde(default)]
        estimate_ma: bool,
        series: Option<Vec<String>>,
        #[serde(default)]
        common: bool,
    },
    Regression {
        name: Option<String>,
        #[serde(default)]
        covariates: Vec<String>,
        #[serde(default)]
        intercept: bool,
        /// Coefficient disturbance covariance; static coefficients when absent.
        q: Option<CovFile>,
        /// Initial coefficient covariance; diffuse when absent.
        p1: Option<CovFile>,
        series: Option<Vec<String>>,
        #[serde(default)]
        common: bool,
    },
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// Covariance block: a number (known variance), `"unknown"`, `"full"`,
/// `"zero"`, a diagonal with `null` for unknown entries, or a known matrix.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CovFile {
    Number(f64),
    Word(String),
    Diagonal(Vec<Option<f64>>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ParamSource {
    Values(Vec<f64>),
    /// A `params.csv` written by `fit`.
    File(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitFile {
    #[serde(default = "nelder_mead")]
    pub optimizer: String,
    #[serde(default)]
    pub nsim: usize,
    pub seed: Option<u64>,
    #[serde(default = "yes")]
    pub antithetic: bool,
    /// Starting vectors on the unconstrained scale.
    #[serde(default)]
    pub starts: Vec<Vec<f64>>,
    pub max_iter: Option<u64>,
    /// Fixed values on the unconstrained scale; no optimization when given.
    pub parameters: Option<ParamSource>,
}

impl Default for FitFile {
    fn default() -> Self {
        FitFile {
            optimizer: nelder_mead(),
            nsim: 0,
            seed: None,
            antithetic: true,
            starts: Vec::new(),
            max_iter: None,
            parameters: None,
        }
    }
}

fn nelder_mead() -> String {
    "nelder-mead".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonFile {
    /// CSV with exposure, covariate and time columns for future rows.
    pub path: Option<String>,
    pub steps: Option<usize>,
}

impl SpecFile {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::spec("unreadable-spec", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::spec("invalid-spec", e.to_string()))
    }

    pub fn p(&self) -> usize {
        self.data.series.len()
    }

    pub fn distributions(&self) -> Result<Vec<Distribution>, Failure> {
        if self.distributions.is_empty() {
            return Ok(vec![Distribution::Gaussian; self.p()]);
        }
        if self.distributions.len() != self.p() {
            return Err(Failure::spec(
                "distribution-count",
                format!("{} distributions for {} series", self.distributions.len(), self.p()),
            ));
        }
        self.distributions
            .iter()
            .map(|s| Distribution::parse(s).ok_or_else(|| Failure::spec("unknown-distribution", format!("unknown distribution '{s}'"))))
            .collect()
    }

    pub fn exposure(&self) -> Result<Vec<Option<String>>, Failure> {
        match self.data.exposure.len() {
            0 => Ok(vec![None; self.p()]),
            k if k == self.p() => Ok(self.data.exposure.clone()),
            k => Err(Failure::spec("exposure-count", format!("{k} exposure entries for {} series", self.p()))),
        }
    }

    pub fn optimizer(&self) -> Result<Optimizer, Failure> {
        match self.fit.optimizer.to_ascii_lowercase().as_str() {
            "nelder-mead" | "neldermead" | "nm" => Ok(Optimizer::NelderMead),
            "bfgs" => Ok(Optimizer::Bfgs),
            other => Err(Failure::spec("unknown-optimizer", format!("unknown optimizer '{other}'"))),
        }
    }

    /// Checks referenced columns and names before any numeric work.
    pub fn check(&self, table: &Table) -> Vec<Failure> {
        let mut out = Vec::new();
        let mut need = |col: &str, role: &str| {
            if !table.has(col) {
                out.push(Failure::spec("column-not-found", format!("{role} column '{col}' not in {}", self.data.path)));
            }
        };
        for s in &self.data.series {
            need(s, "series");
        }
        for e in self.data.exposure.iter().flatten() {
            need(e, "exposure");
        }
        for c in &self.data.covariates {
            need(c, "covariate");
        }
        if let Some(t) = &self.data.time {
            need(t, "time");
        }
        if self.data.series.is_empty() {
            out.push(Failure::spec("no-series", "data.series is empty".into()));
        }
        let mut names = std::collections::HashSet::new();
        for (k, c) in self.components.iter().enumerate() {
            let name = component_name(c, k);
            if !names.insert(name.clone()) {
                out.push(Failure::spec("duplicate-component", format!("component name '{name}' used twice")));
            }
            if let ComponentFile::Regression { covariates, .. } = c {
                for x in covariates {
                    if !self.data.covariates.contains(x) {
                        out.push(Failure::spec("undeclared-covariate", format!("'{x}' is not listed in data.covariates")));
                    }
                }
            }
            for s in component_series(c).into_iter().flatten() {
                if !self.data.series.contains(s) {
                    out.push(Failure::spec("unknown-series", format!("component '{name}' refers to series '{s}'")));
                }
            }
        }
        out
    }

    /// Library components over `rows` of the covariate columns.
    pub fn components(&self, table: &Table, rows: usize) -> Result<Vec<ComponentSpec<f64>>, Failure> {
        self.components.iter().enumerate().map(|(k, c)| self.component(c, k, table, rows)).collect()
    }

    fn index(&self, series: &Option<Vec<String>>) -> Vec<usize> {
        match series {
            None => (0..self.p()).collect(),
            Some(names) => names.iter().filter_map(|s| self.data.series.iter().position(|x| x == s)).collect(),
        }
    }

    fn component(&self, c: &ComponentFile, k: usize, table: &Table, rows: usize) -> Result<ComponentSpec<f64>, Failure> {
        let name = component_name(c, k);
        let dim = |series: &Option<Vec<String>>, common: bool| if common { 1 } else { self.index(series).len() };
        let spec = match c {
            ComponentFile::Trend { degree, q, series, common, .. } => {
                let d = dim(series, *common);
                let q = if q.is_empty() {
                    vec![Cov::unknown(d); *degree]
                } else {
                    q.iter().map(|c| c.to_cov(d)).collect::<Result<_, _>>()?
                };
                build_trend(*degree, q, self.index(series), *common)?
            }
            ComponentFile::Seasonal { period, trigonometric, q, series, common, .. } => {
                let q = cov_or_unknown(q, dim(series, *common))?;
                build_seasonal(*period, *trigonometric, q, self.index(series), *common)?
            }
            ComponentFile::Cycle { period, q, series, common, .. } => {
                let q = cov_or_unknown(q, dim(series, *common))?;
                build_cycle(*period, q, self.index(series), *common)?
            }
            ComponentFile::Arima {
                ar,
                ma,
                d,
                q,
                stationary,
                estimate_ar,
                estimate_ma,
                series,
                common,
                ..
            } => {
                let q = cov_or_unknown(q, dim(series, *common))?;
                let spec = build_arima(ar.clone(), ma.clone(), *d, q, *stationary, self.index(series), *common)?;
                if *estimate_ar || *estimate_ma {
                    estimate_arima_coefficients(spec, *estimate_ar, *estimate_ma)?
                } else {
                    spec
                }
            }
            ComponentFile::Regression {
                covariates,
                intercept,
                q,
                p1,
                series,
                common,
                ..
            } => {
                let mut cols: Vec<Vec<f64>> = Vec::new();
                let mut names = Vec::new();
                if *intercept {
                    cols.push(vec![1.0; rows]);
                    names.push("intercept".to_string());
                }
                for x in covariates {
                    cols.push(table.covariate(x, rows)?);
                    names.push(x.clone());
                }
                if cols.is_empty() {
                    return Err(Failure::spec("empty-regression", format!("regression '{name}' has no columns")));
                }
                let kq = cols.len();
                let x = Matrix::from_vec(rows, kq, (0..rows).flat_map(|t| cols.iter().map(move |c| c[t])).collect());
                let q = q.as_ref().map(|c| c.to_cov(kq)).transpose()?;
                let p1 = p1.as_ref().map(|c| c.to_cov(kq)).transpose()?;
                build_regression(vec![x], self.index(series), *common, q, p1, names)?
            }
        };
        Ok(spec.named(name))
    }

    /// Observation covariance over all series; entries of non-Gaussian
    /// series are zero.
    pub fn h(&self, dists: &[Distribution]) -> Result<Cov<f64>, Failure> {
        let p = self.p();
        let gaussian = |v: Option<f64>| -> Vec<Option<f64>> {
            dists.iter().map(|d| if d.is_gaussian() { v } else { Some(0.0) }).collect()
        };
        match &self.h {
            None => Ok(Cov::Diagonal(gaussian(None))),
            Some(CovFile::Number(v)) => Ok(Cov::Diagonal(gaussian(Some(*v)))),
            Some(CovFile::Word(w)) if w == "unknown" => Ok(Cov::Diagonal(gaussian(None))),
            Some(c) => c.to_cov(p),
        }
    }
}

fn cov_or_unknown(c: &Option<CovFile>, dim: usize) -> Result<Cov<f64>, Failure> {
    match c {
        None => Ok(Cov::unknown(dim)),
        Some(c) => c.to_cov(dim),
    }
}

pub fn component_name(c: &ComponentFile, k: usize) -> String {
    let (name, kind) = match c {
        ComponentFile::Trend { name, .. } => (name, "trend"),
        ComponentFile::Seasonal { name, .. } => (name, "seasonal"),
        ComponentFile::Cycle { name, .. } => (name, "cycle"),
        ComponentFile::Arima { name, .. } => (name, "arima"),
        ComponentFile::Regression { name, .. } => (name, "regression"),
    };
    name.clone().unwrap_or_else(|| if k == 0 { kind.to_string() } else { format!("{kind}{}", k + 1) })
}

fn component_series(c: &ComponentFile) -> Option<&Vec<String>> {
    match c {
        ComponentFile::Trend { series, .. }
        | ComponentFile::Seasonal { series, .. }
        | ComponentFile::Cycle { series, .. }
        | ComponentFile::Arima { series, .. }
        | ComponentFile::Regression { series, .. } => series.as_ref(),
    }
}

impl CovFile {
    pub fn to_cov(&self, dim: usize) -> Result<Cov<f64>, Failure> {
        let bad = |what: String| Failure::spec("invalid-covariance", what);
        match self {
            CovFile::Number(v) if dim == 1 => Ok(Cov::variance(*v)),
            CovFile::Number(v) => Ok(Cov::Diagonal(vec![Some(*v); dim])),
            CovFile::Word(w) => match w.as_str() {
                "unknown" => Ok(Cov::unknown(dim)),
                "full" => Ok(Cov::Full(dim)),
                "zero" => Ok(Cov::zero(dim)),
                other => Err(bad(format!("unknown covariance keyword '{other}'"))),
            },
            CovFile::Diagonal(d) if d.len() == dim => Ok(Cov::Diagonal(d.clone())),
            CovFile::Matrix(rows) if rows.len() == dim && rows.iter().all(|r| r.len() == dim) => {
                Ok(Cov::Known(Matrix::from_vec(dim, dim, rows.concat())))
            }
            _ => Err(bad(format!("covariance block must have dimension {dim}"))),
        }
    }
}

/// Resolves `path` against the directory of the spec file.
pub fn resolve(spec_path: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        spec_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}
