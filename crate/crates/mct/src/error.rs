use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("group error: {0}")]
    Group(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("batchnorm running statistics are uninitialized ({0})")]
    UninitializedStats(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("weight transfer failed, missing: {missing:?}, unexpected: {unexpected:?}")]
    Transfer {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("label error: {0}")]
    Label(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape {
            op,
            msg: msg.into(),
        }
    }

    /// Machine-readable category reported by the command-line driver.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. }
            | Error::Shape { .. }
            | Error::Group(_)
            | Error::Rank(_)
            | Error::NonFinite(_) => "shape",
            Error::Config(_) | Error::Transfer { .. } => "config",
            Error::UninitializedStats(_)
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::Label(_)
            | Error::Metrics(_)
            | Error::Json(_) => "data",
            Error::Io(_) | Error::Csv(_) => "io",
        }
    }

    /// Process exit code for a given category.
    pub fn exit_code(&self) -> u8 {
        match self.category() {
            "config" => 2,
            "data" => 3,
            "shape" => 4,
            _ => 5,
        }
    }
}
