use thiserror::Error;

/// Errors produced by model construction, data handling, and numerics.
#[derive(Debug, Error)]
pub enum ModelError {
    /// A parameter violated its domain (e.g. a non-positive rate).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input data violated a schema or precondition.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A numerical routine failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ModelError {
    /// Process exit code for the CLI: 3 for data problems, 4 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            ModelError::Numerical(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
