use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum PincError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("equation of state requires positive pressure, got {0} Pa")]
    NonPositivePressure(f64),

    #[error("Colebrook iteration did not converge after {0} iterations")]
    ColebrookNonConvergence(usize),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("nonlinear solve failed: {0}")]
    SolverFailure(String),

    #[error("malformed model document: {0}")]
    MalformedDocument(String),

    #[error("unsupported format_version {found} (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },

    #[error("metric undefined: {0}")]
    MetricDomain(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, PincError>;
