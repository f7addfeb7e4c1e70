use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A grid, model or session configuration violates its invariants.
    #[error("specification error: {0}")]
    Spec(String),
    /// An operation was called outside its precondition.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("validation error: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("translation error: missing or malformed variable `{variable}`")]
    Translation { variable: String },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("divergence: non-finite value at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("referential integrity error: {0}")]
    Integrity(String),
    #[error("log record {seq}: {message}")]
    Record { seq: u64, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(vec![msg.into()])
    }

    pub(crate) fn missing(variable: impl Into<String>) -> Self {
        Error::Translation {
            variable: variable.into(),
        }
    }
}
