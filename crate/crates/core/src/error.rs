use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {term} (index {index})")]
    NonFinite { term: &'static str, index: usize },
    #[error("cholesky factorization failed (last jitter {jitter:e})")]
    Cholesky { jitter: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("all {0} restarts failed")]
    AllRestartsFailed(usize),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            got,
        })
    }
}
