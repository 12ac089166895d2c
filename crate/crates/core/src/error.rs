use thiserror::Error;

use crate::model::Regime;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("operation `{op}` is not available in the {regime:?} regime")]
    RegimeMismatch { op: &'static str, regime: Regime },

    #[error("angle {theta} is not reachable: {reason}")]
    Unreachable { theta: f64, reason: &'static str },

    #[error("{what} is too close to a pole (|denominator| = {magnitude:e})")]
    NearPole { what: &'static str, magnitude: f64 },

    #[error("{what} did not converge (estimate change {change:e} exceeds {tolerance:e})")]
    NotConverged {
        what: &'static str,
        change: f64,
        tolerance: f64,
    },

    #[error("singular system in {what}")]
    Singular { what: &'static str },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
