use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("index {index} outside [1, {n}]")]
    IndexOutOfRange { index: u64, n: u64 },
    #[error("delta {delta} is zero or exceeds the bound {bound}")]
    InvalidDelta { delta: i64, bound: i64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsupported moment p = {0}")]
    UnsupportedMoment(f64),
    #[error("sketch is not recoverable")]
    NotRecoverable,
    #[error("database has {size} values, at least {required} required")]
    DatabaseTooSmall { size: usize, required: usize },
    #[error("query budget of {0} exhausted")]
    QueryBudgetExhausted(u64),
    #[error("sparse recovery failed at step {0}")]
    RecoveryFailed(u64),
    #[error("stream longer than its bound m = {0}")]
    StreamTooLong(u64),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("malformed sketch blob: {0}")]
    Blob(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
