//! Stability analysis of a two-node tandem queue whose admission rate
//! depends on the downstream queue length.
//!
//! The crate covers the model itself ([`rate_model`]), the geometric laws it
//! reduces to ([`geom_dist`]), explicit Lyapunov functions ([`lyapunov`]),
//! analytic verdicts and phase maps ([`stability`]), and two numerical
//! cross-checks: truncated stationary solves ([`numerics`]) and Monte Carlo
//! simulation ([`simulator`]).

pub mod ddouble;
pub mod error;
pub mod geom_dist;
pub mod lyapunov;
pub mod numerics;
pub mod rate_model;
pub mod simulator;
pub mod stability;

pub use ddouble::DoubleDouble;
pub use error::{Error, Result};
pub use geom_dist::{GeometricDist, LimitBundle, TruncatedGeometric};
pub use lyapunov::{Certificate, LyapunovFn, MarginSearch, StateFunction};
pub use numerics::{OracleVerdict, StationarySolution, TruncatedGrid};
pub use rate_model::{
    Mechanism, RateFunction, ServiceRates, State, SystemSpec, Threshold, Transition, Variant,
};
pub use simulator::{EmpiricalVerdict, SimConfig, TrajectoryStats};
pub use stability::{PhaseLabel, ThresholdAnswer, Verdict, VerdictStatus, Witness};
