use thiserror::Error;

/// Errors raised by the fitting, weighting and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the support or admissible range of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Maximum-likelihood fitting failed or the data cannot identify the model.
    #[error("fit failed: {reason}{}", diagnostics.as_ref().map(|d| format!(" ({d})")).unwrap_or_default())]
    Fit {
        reason: String,
        diagnostics: Option<FitDiagnostics>,
    },

    /// Caller supplied structurally invalid input (empty sets, mismatched lengths, bad grids).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The computation produced a degenerate or non-finite quantity.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("group `{group}`: {source}")]
    Group {
        group: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn fit(reason: impl Into<String>) -> Self {
        Error::Fit {
            reason: reason.into(),
            diagnostics: None,
        }
    }

    pub(crate) fn in_group(self, group: &str) -> Self {
        Error::Group {
            group: group.to_string(),
            source: Box::new(self),
        }
    }
}

/// Best-so-far state of a failed optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub best_params: Vec<f64>,
    pub best_log_likelihood: f64,
    pub evaluations: usize,
}

impl std::fmt::Display for FitDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "best params {:?}, log-likelihood {}, {} evaluations",
            self.best_params, self.best_log_likelihood, self.evaluations
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
