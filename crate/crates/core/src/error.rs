//! Crate-wide error type.

/// Unified error for all pipeline operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An image violates a structural invariant (size, finiteness, negativity).
    #[error("invalid image: {0}")]
    InvalidImage(String),
    /// Two rasters that must agree in shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// A configuration value is outside its legal domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// A fitted or derived model is unusable (non-positive variance, no decay).
    #[error("calibration failed: {0}")]
    Calibration(String),
    /// The slanted-edge pipeline could not produce a trustworthy measurement.
    #[error("edge measurement failed: {0}")]
    EdgeMeasurement(String),
    /// NaN/Inf tripwire or other numeric failure inside a kernel.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Checkpoint or quantized-model file is malformed.
    #[error("model file error: {0}")]
    ModelFile(String),
    /// An input collection that must be non-empty is empty.
    #[error("empty input: {0}")]
    Empty(String),
    #[error("tiff error: {0}")]
    Tiff(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
