use thiserror::Error;

/// Errors produced by the unlearning engine and its oracles.
#[derive(Debug, Error)]
pub enum FamrError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("optimization diverged at step {step}: {reason}")]
    Diverged {
        step: usize,
        reason: String,
        /// Rows recorded before the failure, when the failure happened inside a run.
        trace: Option<Box<crate::opt::OptTrace>>,
    },

    #[error("matrix is singular or indefinite (smallest eigenvalue {lambda_min:e}); supply damping")]
    Singular { lambda_min: f64 },

    #[error("dense Hessian limited to {limit} parameters, model has {count}; use a smaller spec")]
    TooManyParameters { count: usize, limit: usize },

    #[error("{0} did not converge")]
    NoConvergence(String),

    #[error("malformed document: {0}")]
    Format(String),
}

pub type Result<T, E = FamrError> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(FamrError::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(FamrError::NonFinite(format!("{context}[{i}] = {}", values[i]))),
        None => Ok(()),
    }
}
