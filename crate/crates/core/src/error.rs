use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid discretization: {0}")]
    Discretization(String),

    #[error("budget target {target} unreachable: mean count {reached} at upper bracket {upper}")]
    UnreachableBudget {
        target: f64,
        reached: f64,
        upper: f64,
    },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("unknown schedule `{0}`")]
    UnknownSchedule(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("log format version mismatch: expected `{expected}`, found `{found}`")]
    VersionMismatch { expected: String, found: String },

    #[error("corrupt log at byte offset {offset}: {reason}")]
    CorruptLog { offset: u64, reason: String },

    #[error("recall source failed: {0}")]
    RecallSource(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
