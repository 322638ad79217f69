use thiserror::Error;

use crate::rate_model::State;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rate function: {0}")]
    InvalidRateFunction(String),

    #[error("invalid service rates: mu1={mu1}, mu2={mu2} (both must be finite and > 0)")]
    InvalidServiceRates { mu1: f64, mu2: f64 },

    /// The chain is reducible when no traffic is admitted into the empty system.
    #[error("degenerate: λ(0)=0")]
    Degenerate,

    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("rate function is not eventually vanishing")]
    NotVanishing,

    #[error("operation requires the {expected} variant")]
    UnsupportedVariant { expected: &'static str },

    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),

    #[error("numerical range exceeded: {0}")]
    Numerical(String),

    #[error("grid of {states} states exceeds the cap of {cap}")]
    GridTooLarge { states: usize, cap: usize },

    #[error("stationary solve failed: residual {residual:e}")]
    SolverFailure { residual: f64 },

    #[error("replication {replication} hit the event cap of {max_events} at t={time}")]
    EventCapExceeded {
        replication: u64,
        max_events: u64,
        time: f64,
        partial: Box<crate::simulator::TrajectoryStats>,
    },

    #[error("no passage into the target set within the horizon in {censored} of {replications} replications")]
    Timeout {
        censored: usize,
        replications: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("state {0:?} lies outside the truncation grid")]
    OutsideGrid(State),
}
