use thiserror::Error;

/// Errors raised by the rough-path and Monte Carlo machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {time} is not a grid node (step {step})")]
    NotAGridNode { time: f64, step: f64 },

    #[error("missing derivative of order {order} for field `{field}`")]
    MissingDerivative { field: String, order: usize },

    #[error("non-finite value on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("interpolation mesh too narrow: {fraction:.4} of paths left the mesh")]
    MeshTooNarrow { fraction: f64 },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("unknown preset `{name}`; available: {available}")]
    UnknownPreset { name: String, available: String },

    #[error("finite-difference step {h:e} below cancellation threshold {threshold:e}")]
    StepTooSmall { h: f64, threshold: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
