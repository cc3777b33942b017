//! Crate-wide error type.

use crate::qsim::TraceRecord;

/// Errors produced by any module in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An exact-enumeration or dense-matrix guardrail was exceeded.
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    /// A lookup (angle-table depth, artifact file) found nothing.
    #[error("not found: {0}")]
    NotFound(String),

    /// The angle optimizer hit a non-finite objective; the trace up to the
    /// failure is attached for post-mortems.
    #[error("optimization failed: {reason}")]
    OptimizationFailure {
        reason: String,
        trace: Vec<TraceRecord>,
    },

    /// Inputs that must agree numerically do not (e.g. a transition matrix
    /// that is not reversible for the stated target).
    #[error("inconsistency: {0}")]
    Inconsistency(String),

    /// Autocorrelation of a zero-variance series.
    #[error("autocorrelation undefined: {0}")]
    UndefinedAutocorrelation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
