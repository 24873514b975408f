//! Linear Gaussian and exponential-family state space models.
//!
//! Sequential Kalman filtering and smoothing with exact diffuse
//! initialization, diffuse maximum likelihood, Gaussian approximation of
//! exponential-family observations, importance sampling, simulation
//! smoothing, residual diagnostics and forecasting.

pub mod approx;
pub mod builders;
pub mod error;
pub mod filter;
pub mod inference;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod simulation;
pub mod smoother;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{Distribution, Observations, StateSpaceModel, SystemMatrix, Violation, ViolationCode};
pub use scalar::Real;

pub type Matrix64 = Matrix<f64>;
pub type Model64 = StateSpaceModel<f64>;
pub type Observations64 = Observations<f64>;
pub type SystemMatrix64 = SystemMatrix<f64>;
pub type AssembledModel64 = builders::AssembledModel<f64>;
pub type FilterResult64 = filter::FilterResult<f64>;
pub type SmoothResult64 = smoother::SmoothResult<f64>;
pub type FitOptions64 = inference::FitOptions<f64>;
pub type FitResult64 = inference::FitResult<f64>;
pub type LogLik64 = likelihood::LogLik<f64>;
