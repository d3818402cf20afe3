use thiserror::Error;

/// Errors raised by the separability toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a shape, ordering or range precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation would exceed its configured memory or size budget.
    #[error("resource error: {what} needs {required_bytes} bytes, budget is {budget_bytes} bytes")]
    Resource {
        what: String,
        required_bytes: u64,
        budget_bytes: u64,
    },

    /// A separable approximation is undefined for this kernel.
    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    /// The leading flip-kernel eigenvalue is not separated from the second.
    #[error("spectral degeneracy: lambda1 = {lambda1:e}, lambda2 = {lambda2:e}")]
    SpectralDegeneracy { lambda1: f64, lambda2: f64 },

    /// An iterative solver hit its iteration cap.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// A bootstrap replicate failed twice in a row.
    #[error("bootstrap replicate {replicate} failed after regeneration: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    /// Too many Monte-Carlo runs failed.
    #[error("{failed} of {runs} simulation runs failed (first failure: {first})")]
    Experiment {
        failed: usize,
        runs: usize,
        first: String,
    },

    /// Malformed sample or configuration file.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateKernel(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the kernel itself (trace, denominator or
    /// eigengap conditions), as opposed to bad input or exhausted resources.
    pub fn is_degeneracy(&self) -> bool {
        matches!(
            self,
            Error::DegenerateKernel(_)
                | Error::SpectralDegeneracy { .. }
                | Error::NoConvergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
