use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("token index {index} at sequence {row}, position {position} is outside the vocabulary (size {vocab_size})")]
    IndexOutOfRange {
        row: usize,
        position: usize,
        index: f64,
        vocab_size: usize,
    },

    #[error("backward called before forward in {0}")]
    BackwardBeforeForward(String),

    #[error("{0} is not deterministic in train mode; freeze the dropout masks or switch to eval mode before gradient checking")]
    NonDeterministic(String),

    #[error("batch normalization needs at least 2 samples in train mode, got {0}")]
    BatchTooSmall(usize),

    #[error("training diverged at epoch {epoch}: first non-finite tensor is `{tensor}`")]
    Divergence { epoch: usize, tensor: String },

    #[error("empty {0}")]
    Empty(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }

    /// Prefixes the context of a shape error, leaving other variants untouched.
    pub fn within(self, scope: &str) -> Self {
        match self {
            Error::ShapeMismatch { context, expected, got } => Error::ShapeMismatch {
                context: format!("{scope}/{context}"),
                expected,
                got,
            },
            other => other,
        }
    }

    /// True for failures caused by numerics rather than inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
