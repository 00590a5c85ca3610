use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed feature file. `location` is a byte offset or a line number.
    #[error("format error at {location}: {message}")]
    Format { location: String, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid segment: {}", .0.join("; "))]
    InvalidSegment(Vec<String>),

    #[error("value error: {0}")]
    Value(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("shift step {step} must be smaller than the sequence length {t}")]
    StepTooLarge { step: usize, t: usize },

    #[error("classification list for `{0}` is empty")]
    EmptyClassification(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("ground truth contains no instances")]
    NoGroundTruth,

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid_segment(msg: impl Into<String>) -> Self {
        Error::InvalidSegment(vec![msg.into()])
    }
}
