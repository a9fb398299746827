use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate vector: {0} has zero norm")]
    DegenerateVector(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("invalid label value {value:?} at row {row}, column {col}")]
    InvalidLabel { row: usize, col: usize, value: String },

    #[error("row count mismatch: {features} feature rows vs {labels} label rows")]
    RowCountMismatch { features: usize, labels: usize },

    #[error("label row {row} has no positive entry")]
    ZeroLabelRow { row: usize },

    #[error("class {class} has {available} unassigned items, {requested} requested")]
    InsufficientItems { class: usize, requested: usize, available: usize },

    #[error("no dictionary entry for label vector {0:?}")]
    MissingDictionaryEntry(Vec<u8>),

    #[error("non-finite loss in {stage} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { stage: &'static str, epoch: usize, batch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("code length mismatch: {0} vs {1} bits")]
    CodeLength(usize, usize),

    #[error("no query has a relevant database item")]
    NoEvaluableQueries,

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("stage {stage} failed: {source}")]
    Stage { stage: &'static str, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure classes, used by the command-line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Other,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::MalformedRow { .. }
            | Error::InvalidLabel { .. }
            | Error::RowCountMismatch { .. }
            | Error::ZeroLabelRow { .. }
            | Error::InsufficientItems { .. }
            | Error::MissingDictionaryEntry(_)
            | Error::Checkpoint { .. }
            | Error::Csv(_) => ErrorKind::Data,
            Error::DegenerateVector(_)
            | Error::Domain(_)
            | Error::NonFiniteLoss { .. }
            | Error::NoEvaluableQueries => ErrorKind::Numeric,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Other,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage { stage, source: Box::new(other) },
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
