//! Shared error type for every fallible operation in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A documented precondition was violated (mismatched grids, bad bounds, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A node or cell index addressed storage outside the grid.
    #[error("index out of range: {0}")]
    Index(String),
    /// An iterative routine exceeded its cap or produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A continuation stage stopped without meeting the gradient tolerance.
    #[error("continuation stage {stage} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        stage: usize,
        iterations: usize,
        residual: f64,
    },
    /// The requested check cannot decide either way on this input.
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// A field file or other structured text failed to parse.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
