use thiserror::Error;

/// Errors surfaced by the numeric and training layers.
#[derive(Debug, Error)]
pub enum ColinError {
    #[error("shape mismatch: {op} expects compatible shapes, got {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal residual {residual:.3e})")]
    SvdNonConvergence { sweeps: usize, residual: f64 },

    #[error("training diverged at step {step}: non-finite loss")]
    Divergence { step: usize },

    #[error("non-finite evaluation at coordinate {index}")]
    NonFinite { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("fused and factored outputs disagree (max abs diff {max_diff:.3e}, tolerance {tol:.3e})")]
    FusionMismatch { max_diff: f64, tol: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ColinError>;
