use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the mathematical domain of an operation
    /// (negative bandwidth, out-of-support count, nonpositive parameter, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The quadratic program has no feasible point. Carries the provenance
    /// labels of the constraint rows implicated by the infeasibility
    /// certificate.
    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    /// The solver failed for a reason other than infeasibility.
    #[error("solver error: {0}")]
    Solver(String),

    /// Interpolation over distinct counts needs at least two knots.
    #[error("fewer than two distinct counts: interpolation impossible")]
    TooFewDistinct,

    /// Malformed input data (CSV rows, non-constant m, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
