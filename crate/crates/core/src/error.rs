use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape: {0}")]
    Shape(String),

    #[error("stale or mismatched cache: {0}")]
    Cache(String),

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// Predicted ranks with (numerically) zero spread; the correlation loss is undefined.
    #[error("degenerate prediction: predicted-rank sd {sd:e} below floor")]
    DegeneratePrediction { sd: f64 },

    /// Either rank vector has zero variance.
    #[error("undefined correlation: zero rank variance")]
    UndefinedCorrelation,

    #[error("validation: {0}")]
    Validation(String),

    #[error("incomplete grid: no row for dataset `{dataset}`, algorithm `{algorithm}`, fidelity {fidelity}")]
    IncompleteGrid {
        dataset: String,
        algorithm: String,
        fidelity: usize,
    },

    #[error("split: {0}")]
    Split(String),

    #[error("training aborted at epoch {epoch}, batch {batch}, dataset `{dataset}`: {reason}")]
    TrainingAborted {
        epoch: usize,
        batch: usize,
        dataset: String,
        reason: String,
    },

    #[error("report: {0}")]
    Report(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics at runtime rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::DegeneratePrediction { .. } | Error::TrainingAborted { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
