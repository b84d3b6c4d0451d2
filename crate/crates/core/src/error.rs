use thiserror::Error;

/// Errors produced while building, fitting or evaluating additive index models.
#[derive(Debug, Error)]
pub enum GaimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("column {column} has norm {norm:e}; cannot project onto the unit sphere")]
    DegenerateStep { column: usize, norm: f64 },

    #[error("non-finite {block} at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        block: &'static str,
    },

    #[error("quadrature did not converge on [0, {upper}]")]
    Quadrature { upper: f64 },

    #[error("invalid response at index {index}: {reason}")]
    InvalidResponse { index: usize, reason: String },

    #[error("Poisson draw exceeded cap with mean {mean}")]
    RunawayPoisson { mean: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GaimError>;

pub(crate) fn check_len(expected: usize, actual: usize, context: &'static str) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(GaimError::DimensionMismatch {
            expected,
            actual,
            context,
        })
    }
}
