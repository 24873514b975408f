//! Errors with a machine-readable code and a process exit status.

use std::fmt;

use ssmkit::{Error, ViolationCode};

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    /// 1 for specification or data errors, 2 for numerical non-convergence.
    pub exit: u8,
    pub code: String,
    pub message: String,
}

impl Failure {
    pub fn spec(code: &str, message: String) -> Self {
        Failure {
            exit: 1,
            code: code.into(),
            message,
        }
    }

    pub fn numeric(code: &str, message: String) -> Self {
        Failure {
            exit: 2,
            code: code.into(),
            message,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.code, self.message)
    }
}

const CODES: [ViolationCode; 18] = [
    ViolationCode::DimensionMismatch,
    ViolationCode::TimeVaryingLength,
    ViolationCode::NonsymmetricP1,
    ViolationCode::P1NotPsd,
    ViolationCode::P1infNotDiagonal,
    ViolationCode::P1infNotBinary,
    ViolationCode::DiffuseRowNonzero,
    ViolationCode::NonsymmetricH,
    ViolationCode::HNotPsd,
    ViolationCode::HNongaussianNonzero,
    ViolationCode::NonsymmetricQ,
    ViolationCode::QNotPsd,
    ViolationCode::NonpositiveU,
    ViolationCode::NonfiniteValue,
    ViolationCode::DistributionCount,
    ViolationCode::NegativeTol,
    ViolationCode::NameCount,
    ViolationCode::ObservationOutOfSupport,
];

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Model(msg) => {
                let code = CODES.iter().map(|c| c.as_str()).find(|c| msg.starts_with(&format!("{c}: ")));
                match code {
                    Some(c) => Failure::spec(c, msg[c.len() + 2..].to_string()),
                    None => Failure::spec("model", msg),
                }
            }
            Error::Usage(msg) => Failure::spec("usage", msg),
            Error::Data(msg) => Failure::spec("data", msg),
            Error::Estimation(msg) => Failure::spec("estimation", msg),
            Error::DiffusePhase { .. } => Failure::spec("diffuse-phase", e.to_string()),
            Error::Undefined(msg) => Failure::spec("undefined", msg),
            Error::Approx(msg) => Failure::numeric("non-convergence", msg),
            Error::Numeric { .. } => Failure::numeric("numeric", e.to_string()),
        }
    }
}
