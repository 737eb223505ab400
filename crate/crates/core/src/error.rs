use std::path::PathBuf;

/// Errors produced anywhere in the forecasting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("ingestion error in {path}: row {row}: {message}")]
    Ingestion {
        path: PathBuf,
        row: u64,
        message: String,
    },

    #[error("degenerate series `{0}`: needs at least two distinct values")]
    DegenerateSeries(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("invalid strategy spec: {0}")]
    InvalidSpec(String),

    #[error("strategy `{name}` failed: {source}")]
    Strategy {
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate task: oracle error is zero, relative errors are undefined")]
    DegenerateTask,

    #[error("fingerprint mismatch: selector bound to {expected}, strategy set is {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("{phase} failed for seed {seed}: {source}")]
    Phase {
        phase: &'static str,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{} already holds results; pass --force to overwrite", .0.display())]
    OutputExists(PathBuf),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
