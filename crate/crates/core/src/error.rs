use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The variants split into two families that the CLI maps onto distinct
/// exit codes: input validation problems and numerical failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FgpError {
    #[error("validation error in `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("numéraire wealth is not strictly positive at step {step} (value {value})")]
    DegenerateNumeraire { step: usize, value: f64 },

    #[error("portfolio `{label}` went bankrupt at step {step} (wealth factor {factor})")]
    Bankruptcy { label: String, step: usize, factor: f64 },

    #[error("generating function evaluation failed at step {step}: {reason}")]
    Evaluation { step: usize, reason: String },

    #[error("factor set is rank deficient: vector {index} has residual norm {pivot:e}")]
    RankDeficient { index: usize, pivot: f64 },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("variogram fit did not converge (best residual norm {best_residual:e})")]
    FitDivergence { best_residual: f64 },

    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
}

impl FgpError {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        FgpError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(self, FgpError::Validation { .. } | FgpError::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, FgpError>;
