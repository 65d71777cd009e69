use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the uplift pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("row {row}: categorical field `{field}` has level {value}, cardinality is {cardinality}")]
    Oov {
        row: usize,
        field: String,
        value: i64,
        cardinality: usize,
    },

    #[error("treatment column is constant; cannot normalize")]
    DegenerateTreatment,

    #[error("variant error: {0}")]
    Variant(String),

    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
