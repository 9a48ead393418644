use thiserror::Error;

pub type Result<T> = std::result::Result<T, CurvspecError>;

#[derive(Debug, Error)]
pub enum CurvspecError {
    #[error("invalid flow parameters: {0}")]
    InvalidParams(String),

    #[error("expression error: {0}")]
    Expr(#[from] crate::expr::ExprError),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("resolution too coarse: {0}")]
    Unresolved(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("time step {dt:.3e} exceeds stability limit {limit:.3e}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("hypothesis check is not applicable: {0}")]
    NotApplicable(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error in {path}: {message}")]
    FileFormat { path: String, message: String },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl CurvspecError {
    pub fn mesh(msg: impl Into<String>) -> Self {
        CurvspecError::Mesh(msg.into())
    }

    pub fn file(path: impl Into<String>, message: impl Into<String>) -> Self {
        CurvspecError::FileFormat { path: path.into(), message: message.into() }
    }
}
