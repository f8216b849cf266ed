use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{func}: argument {value} outside domain ({expected})")]
    Domain {
        func: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("{what} did not converge after {iterations} iterations")]
    Convergence { what: &'static str, iterations: usize },

    #[error("calibration infeasible: {0}")]
    Calibration(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("graph format error at line {line}: {msg}")]
    GraphFormat { line: usize, msg: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model has {0} hyperparameters; at most 4 are supported")]
    TooManyHyperparameters(usize),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unknown level or region `{0}`")]
    UnknownLevel(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable prefix used by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "E_DOMAIN",
            Error::Convergence { .. } => "E_CONVERGENCE",
            Error::Calibration(_) => "E_CALIBRATION",
            Error::Dimension(_) => "E_DIMENSION",
            Error::DegenerateDesign(_) => "E_DESIGN",
            Error::GraphFormat { .. } => "E_GRAPH",
            Error::Parse { .. } => "E_PARSE",
            Error::Config(_) => "E_CONFIG",
            Error::TooManyHyperparameters(_) => "E_HYPER",
            Error::IndexOutOfRange { .. } => "E_INDEX",
            Error::UnknownLevel(_) => "E_LEVEL",
            Error::Io { .. } => "E_IO",
        }
    }

    pub(crate) fn domain(func: &'static str, value: f64, expected: &'static str) -> Self {
        Error::Domain {
            func,
            value,
            expected,
        }
    }
}
