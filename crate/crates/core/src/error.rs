use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Cholesky failed even after the jitter ladder was exhausted.
    #[error("factorization of {what} failed (jitter {jitter:.3e}, condition estimate {condition:.3e})")]
    Factorization {
        what: &'static str,
        jitter: f64,
        condition: f64,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("unknown selector `{0}`")]
    UnknownSelector(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An earlier stage failed; carries its message.
    #[error("{0}")]
    Upstream(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
