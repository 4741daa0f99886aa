use thiserror::Error;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated (bad config value, label
    /// out of range, empty input, and so on).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Vector or matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity crossed a public operation boundary.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A data file violated its schema; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Diverged { epoch: usize, batch: usize },

    /// The detector was asked to flag inputs before calibration.
    #[error("density model is not calibrated; run threshold calibration first")]
    NotCalibrated,

    /// A persisted artifact does not match the inputs it was built from.
    #[error("provenance mismatch: {0}")]
    ProvenanceMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI maps this error to: 2 for I/O, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            _ => 1,
        }
    }
}
