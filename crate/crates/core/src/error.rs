use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("photosynthesis denominator degenerate: |phi| = {value:e} < 1e-30")]
    DegenerateDenominator { value: f64 },

    #[error("non-finite or invalid state at step {step}: {detail}")]
    NonFiniteState { step: usize, detail: String },

    #[error("invalid weather profile: {0}")]
    InvalidProfile(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("timestamps not strictly increasing at row {row}")]
    NonMonotoneTime { row: usize },

    #[error("irregular sampling at row {row}: gap {gap} s deviates from period {period} s")]
    IrregularPeriod { row: usize, gap: f64, period: f64 },

    #[error("cannot resample period {from} s to {to} s")]
    IncompatiblePeriods { from: f64, to: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty mini-batch")]
    EmptyBatch,

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    DivergedLoss { epoch: usize, loss: f64 },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("too few ensemble members ({members}) for confidence level {level}")]
    TooFewMembers { members: usize, level: f64 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scenario {index}: {source}")]
    Scenario {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ensemble member {index}: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
