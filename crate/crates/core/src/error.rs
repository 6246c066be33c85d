use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its admissible range.
    #[error("invalid configuration `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    /// Input data violates a structural invariant.
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Treated or control units are missing where both arms are required.
    #[error("single-arm data: {0}")]
    SingleArm(String),

    /// A query point shares no estimation leaf with one of the arms.
    #[error("missing support: {0}")]
    MissingSupport(String),

    #[error("rank-deficient design: column {column} ({name}) is collinear with earlier columns")]
    RankDeficient { column: usize, name: String },

    #[error("degenerate scores: {0}")]
    DegenerateScores(String),

    #[error("ground truth required but not available")]
    MissingTruth,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.into(), reason: reason.into() }
    }

    /// True for errors caused by the caller's configuration or input files
    /// rather than by the estimation itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. }
                | Error::InvalidData(_)
                | Error::DimensionMismatch { .. }
                | Error::SingleArm(_)
                | Error::MissingTruth
                | Error::Json(_)
        )
    }
}
