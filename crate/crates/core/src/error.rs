use thiserror::Error;

/// Errors produced anywhere in the fitting pipeline.
#[derive(Debug, Error)]
pub enum FiduxError {
    #[error("no records")]
    NoRecords,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("malformed row at row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("non-positive time at row {row}")]
    NonPositiveTime { row: usize },

    #[error("status outside {{0,1}} at row {row}")]
    InvalidStatus { row: usize },

    #[error("inconsistent column count at row {row}: expected {expected}, found {found}")]
    ColumnCount { row: usize, expected: usize, found: usize },

    #[error("invalid record {index}: {message}")]
    InvalidRecord { index: usize, message: String },

    #[error("no failures: fiducial inversion undefined")]
    NoFailures,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-identifiable: partial likelihood is constant along some direction")]
    NonIdentifiable,

    #[error("degenerate fiducial density: {0}")]
    DegenerateDensity(String),

    #[error("solver failure at sweep {sweep}: {message}")]
    Solver { sweep: usize, message: String, state: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty report: {0}")]
    EmptyReport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FiduxError {
    /// Errors caused by the numerics rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, FiduxError::Solver { .. })
    }
}

pub type Result<T> = std::result::Result<T, FiduxError>;
