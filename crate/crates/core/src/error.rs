use thiserror::Error;

/// Errors raised by problem construction, the solvers, and file IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("slack bounds must have zero lower bounds and positive upper bounds")]
    BadSlackBounds,

    #[error("invalid box: {0}")]
    BadBox(String),

    #[error("objective is not convex: {0}")]
    NotConvex(String),

    #[error("unsupported objective: {0}")]
    UnsupportedObjective(String),

    #[error("rank condition violated: {0}")]
    RankDeficient(String),

    #[error("no strictly interior point: {0}")]
    Infeasible(String),

    #[error("point outside the function domain")]
    DomainViolation,

    #[error("{what}: iteration budget of {limit} exhausted")]
    MaxIterExceeded { what: &'static str, limit: usize },

    #[error("matrix is not positive definite: {0}")]
    HessianNotPd(&'static str),

    #[error("instance generation failed: {0}")]
    GenInfeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::Parse(e.to_string())
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                other => Error::Parse(format!("{other:?}")),
            }
        } else {
            Error::Parse(e.to_string())
        }
    }
}
