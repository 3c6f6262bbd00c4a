use thiserror::Error;

/// Errors produced by the model components.
#[derive(Debug, Error)]
pub enum QfanError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("index {index} out of range for {len} pixels")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate pixel index {0} in one block")]
    DuplicateIndex(usize),

    #[error("invalid regularization {0}: must be > 0")]
    InvalidRegularization(f64),

    #[error("invalid bandwidth {0}: must be > 0")]
    InvalidBandwidth(f64),

    #[error("shot count must be at least 1")]
    InvalidShots,

    #[error("state is not normalized (norm deviation {0:e})")]
    UnnormalizedState(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("label {label} out of range for {clusters} clusters")]
    LabelOutOfRange { label: usize, clusters: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("linear solve failed: {0}")]
    Numerical(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = QfanError> = std::result::Result<T, E>;

impl QfanError {
    pub(crate) fn mismatch(context: &'static str, expected: usize, actual: usize) -> Self {
        QfanError::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than
    /// broken internal invariants.
    pub fn is_validation(&self) -> bool {
        !matches!(self, QfanError::Invariant(_) | QfanError::Numerical(_))
    }
}
