use std::path::PathBuf;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("manifest {path}, row {row}: {message}")]
    Manifest {
        path: String,
        row: usize,
        message: String,
    },

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("cannot balance classes: {0}")]
    CannotBalance(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("row for class '{0}' has no samples; percentages are undefined")]
    UndefinedRow(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDiverged { epoch: usize },

    #[error("embedding diverged at iteration {iteration}: non-finite gradient")]
    EmbeddingDiverged { iteration: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("write error for {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
