use thiserror::Error;

use crate::trace::ConvergenceTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix {name} is not symmetric (max asymmetry {asymmetry:.3e})")]
    NonSymmetric { name: &'static str, asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    Validation(String),

    #[error("control parameters are not admissible: {0}")]
    Admissibility(String),

    #[error("numerical failure in {what} (residual {residual:.3e})")]
    Numerics { what: String, residual: f64 },

    #[error("rollout horizon must be at least 1")]
    EmptyHorizon,

    #[error("iterate {iteration} left the admissible set after step halving")]
    Step {
        iteration: usize,
        trace: Box<ConvergenceTrace>,
    },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numerics(what: impl Into<String>, residual: f64) -> Self {
        Error::Numerics {
            what: what.into(),
            residual,
        }
    }

    pub(crate) fn config(line: usize, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: message.into(),
        }
    }
}
