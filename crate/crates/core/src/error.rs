//! Crate-wide error type.
//!
//! Every failure carries a stable kebab-case name (see [`Error::name`]) so
//! batch drivers can report the originating condition without string-matching
//! display output.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid-topology: {0}")]
    InvalidTopology(String),

    #[error("invalid-edge: {0}")]
    InvalidEdge(String),

    #[error("invalid-index: {0}")]
    InvalidIndex(String),

    #[error("shape-error: {0}")]
    ShapeError(String),

    #[error("numeric-error: {0}")]
    NumericError(String),

    #[error("invalid-input: {0}")]
    InvalidInput(String),

    #[error("invalid-problem: {0}")]
    InvalidProblem(String),

    #[error("riccati-failure: {0}")]
    RiccatiFailure(String),

    #[error("unstable-input: {0}")]
    UnstableInput(String),

    #[error("unstable-controller: {0}")]
    UnstableController(String),

    #[error("certificate-unavailable: {0}")]
    CertificateUnavailable(String),

    #[error("singular-M: {0}")]
    SingularM(String),

    #[error("threshold-undefined: {0}")]
    ThresholdUndefined(String),

    #[error("divergence-detected: {0}")]
    DivergenceDetected(String),

    #[error("io-error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse-error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable machine-readable name of the error condition.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidTopology(_) => "invalid-topology",
            Error::InvalidEdge(_) => "invalid-edge",
            Error::InvalidIndex(_) => "invalid-index",
            Error::ShapeError(_) => "shape-error",
            Error::NumericError(_) => "numeric-error",
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidProblem(_) => "invalid-problem",
            Error::RiccatiFailure(_) => "riccati-failure",
            Error::UnstableInput(_) => "unstable-input",
            Error::UnstableController(_) => "unstable-controller",
            Error::CertificateUnavailable(_) => "certificate-unavailable",
            Error::SingularM(_) => "singular-M",
            Error::ThresholdUndefined(_) => "threshold-undefined",
            Error::DivergenceDetected(_) => "divergence-detected",
            Error::Io(_) => "io-error",
            Error::Parse(_) => "parse-error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
