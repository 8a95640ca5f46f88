use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate statistics for {kind}: {message}")]
    DegenerateStatistics { kind: String, message: String },

    #[error("degenerate label '{label}': {message}")]
    DegenerateLabel { label: String, message: String },

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("incomplete encodings, missing: {}", .missing.join(", "))]
    Completeness { missing: Vec<String> },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("design matrix error: {0}")]
    Design(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }
}
