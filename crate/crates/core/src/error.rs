use nalgebra::DVector;
use thiserror::Error;

/// Errors raised by estimation, cross-validation and the simulation labs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parameter {index} = {value} lies outside [{lower}, {upper}]")]
    OutOfBox {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("singular matrix in {0}; consider a ridge fallback or different instruments")]
    Singular(&'static str),

    #[error("optimizer did not converge after {starts} start(s): {diagnostic}")]
    NonConvergence {
        starts: usize,
        best_theta: DVector<f64>,
        best_value: f64,
        diagnostic: String,
    },

    #[error("constraints infeasible: max violation {max_violation:.3e}")]
    Infeasible { max_violation: f64 },

    #[error("degenerate variance estimate ({0})")]
    DegenerateVariance(String),

    #[error("equilibrium solver failed after {iterations} iterations (residual {residual:.3e})")]
    Equilibrium { iterations: usize, residual: f64 },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("every candidate model failed")]
    AllModelsFailed,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
