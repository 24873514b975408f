use thiserror::Error;

/// Errors raised by model construction, filtering, smoothing and estimation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The model is structurally invalid (dimensions, symmetry, support).
    #[error("model error: {0}")]
    Model(String),

    /// A numerical failure; `location` names the time/series index when known.
    #[error("numeric error{}: {message}", location.as_ref().map(|l| format!(" at {l}")).unwrap_or_default())]
    Numeric {
        message: String,
        location: Option<String>,
    },

    /// A quantity was requested for a time point inside the diffuse phase.
    #[error("time {t} lies inside the diffuse phase (d = {d})")]
    DiffusePhase { t: usize, d: usize },

    /// API misuse, e.g. a filter result paired with the wrong model.
    #[error("usage error: {0}")]
    Usage(String),

    /// Parameter values outside the admissible region.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// The Gaussian approximation of a non-Gaussian model failed.
    #[error("approximation error: {0}")]
    Approx(String),

    /// Observation outside the support of its distribution.
    #[error("data error: {0}")]
    Data(String),

    /// A statistic is undefined for the supplied input.
    #[error("undefined: {0}")]
    Undefined(String),
}

impl Error {
    pub(crate) fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric {
            message: message.into(),
            location: None,
        }
    }

    pub(crate) fn numeric_at(message: impl Into<String>, t: usize, i: usize) -> Self {
        Error::Numeric {
            message: message.into(),
            location: Some(format!("t={}, i={}", t + 1, i + 1)),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
