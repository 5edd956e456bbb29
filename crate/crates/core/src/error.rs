use thiserror::Error;

use crate::objective::EstimatorKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "{estimator} estimator produced a non-finite {quantity}{}",
        .draw.map(|d| format!(" at draw {d}")).unwrap_or_default()
    )]
    NonFinite {
        estimator: EstimatorKind,
        quantity: &'static str,
        /// `None` when the offending value aggregates all draws.
        draw: Option<usize>,
    },

    #[error("{estimator} estimator is not supported for this objective: {reason}")]
    Unsupported { estimator: EstimatorKind, reason: &'static str },

    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange { what: &'static str, index: usize, size: usize },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("trajectory enumeration too large: {count} candidate trajectories exceeds trajectory cap {cap}")]
    EnumerationTooLarge { count: u128, cap: u128 },

    #[error("tuple enumeration too large: {count} tuples exceeds tuple cap {cap}")]
    TupleCapExceeded { count: u128, cap: u128 },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for the two enumeration-cap failures of the oracle.
    pub fn is_enumeration_cap(&self) -> bool {
        matches!(self, Error::EnumerationTooLarge { .. } | Error::TupleCapExceeded { .. })
    }
}
