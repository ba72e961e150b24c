use thiserror::Error;

/// Errors raised by the near-field ISAC pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid array geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid polar point: range {range} m, angle {angle} rad")]
    InvalidPoint { range: f64, angle: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no coverage: every beam gain in the sweep is zero")]
    NoCoverage,

    #[error("range {range} m is outside the unambiguous interval (0, {max} m)")]
    RangeOutOfBounds { range: f64, max: f64 },

    #[error("normalized Doppler {value} cycles/pulse aliases (|f| must stay below 0.5)")]
    DopplerAlias { value: f64 },

    #[error("target is collocated with array element {0}")]
    DegenerateTarget(usize),

    #[error("range migration of {displacement} m over the CPI exceeds half a range bin ({limit} m)")]
    RangeMigration { displacement: f64, limit: f64 },

    #[error("radar cube of {entries} complex entries exceeds the memory cap of {cap}")]
    CubeTooLarge { entries: u128, cap: u128 },

    #[error("insufficient training data: {0}")]
    InsufficientTraining(String),

    #[error("matrix is not numerically positive definite")]
    NotPositiveDefinite,

    #[error("reduction matrix is rank deficient (column {0})")]
    RankDeficient(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite | Error::RankDeficient(_) | Error::InsufficientTraining(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
