use thiserror::Error;

/// Errors produced by channel synthesis, estimation and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("zero distance between {0}")]
    ZeroDistance(String),

    /// Entries of the initial user-RIS channel too small to invert.
    #[error("degenerate initial user-RIS channel at indices {indices:?}")]
    DegenerateChannel { indices: Vec<usize> },

    #[error("matrix is not Hermitian (relative asymmetry {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is identically zero")]
    ZeroMatrix,

    #[error("zero signal power, cannot calibrate noise")]
    ZeroSignal,

    #[error("insufficient observations: need {required} pilots, got {available}")]
    InsufficientObservations { required: usize, available: usize },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
