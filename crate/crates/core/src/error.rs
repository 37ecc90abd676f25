use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("column {0} has no observed entries")]
    EmptyColumn(usize),

    #[error("row {0} has no observed entries")]
    EmptyRow(usize),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("rank {rank} out of range (max {max})")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("input file not found: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::EmptyColumn(_) | Error::EmptyRow(_) => "coverage",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::RankOutOfRange { .. } => "rank_out_of_range",
            Error::Singular(_) => "singular",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Numerical(_) => "numerical",
            Error::DegenerateTarget(_) => "degenerate_target",
            Error::MissingInput(_) => "missing_input",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
