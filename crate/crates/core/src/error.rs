use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point (z = {z}, t = {t}) lies outside the problem domain")]
    Domain { z: f64, t: f64 },

    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("reference field is identically zero")]
    ZeroReference,

    #[error("requested {requested} samples from {available} points")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("training diverged at epoch {epoch}, batch {batch}: total loss {loss:e}, parameter norm {param_norm:e}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        param_norm: f64,
    },

    #[error("singular tridiagonal system at row {row}")]
    SingularSystem { row: usize },

    #[error("no convergence after {halvings} refinements (last difference {last_diff:e})")]
    RefinementLimit { halvings: usize, last_diff: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
