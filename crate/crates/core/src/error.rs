use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied an argument outside the operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// An internal invariant was broken. These indicate a bug in an earlier
    /// pipeline stage, not a recoverable condition.
    #[error("integrity violation: {0}")]
    Integrity(String),

    /// No assignment satisfies the constraints.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("pressure solve did not converge after {iterations} iterations (residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn integrity<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Integrity(msg.into()))
}

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
