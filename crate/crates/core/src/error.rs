//! Error type shared by all solver and harness modules.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on the inputs was violated.
    #[error("validation: {0}")]
    Validation(String),

    /// An argument is outside the mathematical domain of the operation.
    #[error("domain: {0}")]
    Domain(String),

    /// An iterative solve stopped without reaching its tolerance.
    #[error("no convergence after {iterations} iterations: residual {residual:.3e} > tol {tol:.3e} ({context})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
        context: String,
    },

    /// Two independent computations of the same quantity disagree.
    #[error("numerical consistency: {0}")]
    Inconsistent(String),

    /// Config file problem, with the 1-based line it was detected on.
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
