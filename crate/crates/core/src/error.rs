use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("brute-force minimization is limited to d <= 4 (got d = {0})")]
    BruteForceDimension(usize),

    #[error("initial point is outside the feasible set (distance {distance:e})")]
    Infeasible { distance: f64 },

    #[error("non-finite value at round {round}, worker {worker}: {what}")]
    NonFinite {
        round: usize,
        worker: usize,
        what: String,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{0}")]
    OutOfRange(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
