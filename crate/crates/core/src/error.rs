use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest not found: {0}")]
    ManifestNotFound(PathBuf),

    #[error("{path}: malformed file: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: dim mismatch for modality {modality}: manifest declares {declared}, container header has {found}")]
    DimMismatch {
        path: PathBuf,
        modality: String,
        declared: usize,
        found: usize,
    },

    #[error("{path}: non-finite value at row {row}, column {col}")]
    NonFinite { path: PathBuf, row: usize, col: usize },

    #[error("{path}: duplicate sample_id {id:?} at sample {index}")]
    DuplicateSample { path: PathBuf, id: String, index: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("stratum {stratum} has {count} members, fewer than k={k}")]
    StratumTooSmall { stratum: String, count: usize, k: usize },

    #[error("non-finite gradient in parameter tensor {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss in fold {fold}, epoch {epoch}, batch {batch}: ce={ce}, supcon={supcon}")]
    NonFiniteLoss {
        fold: usize,
        epoch: usize,
        batch: usize,
        ce: f64,
        supcon: f64,
    },

    #[error("non-finite function value at probe coordinate {0}")]
    NonFiniteProbe(usize),

    #[error("unknown subgroup {0:?}")]
    UnknownSubgroup(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

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

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
