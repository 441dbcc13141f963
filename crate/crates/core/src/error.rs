use thiserror::Error;

use crate::market::MarketState;

pub type Result<T> = std::result::Result<T, MarketError>;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid utility")]
    InvalidUtility,

    #[error("index {index} out of range for {len} streamers")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid integrator config: {0}")]
    InvalidIntegrator(String),

    #[error("divergence at t={t}")]
    Divergence { t: f64, last_state: Box<MarketState> },

    #[error("params not symmetric")]
    NotSymmetric,

    #[error("viewer conservation violated: sum {sum} vs total {total}")]
    ConservationViolated { sum: f64, total: f64 },

    #[error("bracket does not straddle: max Re λ = {at_lo} at β_lo, {at_hi} at β_hi")]
    BracketDoesNotStraddle { at_lo: f64, at_hi: f64 },

    #[error("equilibrium failed to converge at β={beta}")]
    EquilibriumFailed { beta: f64 },

    #[error("eigensolver stalled")]
    EigensolverStalled,

    #[error("not converged: {0}")]
    NotConverged(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl MarketError {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        MarketError::InvalidParameter { field, reason: reason.into() }
    }
}
