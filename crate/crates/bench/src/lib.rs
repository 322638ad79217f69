//! Shared fixtures for the benchmarks.

use tandem_core::{RateFunction, SystemSpec};

/// Threshold admission `λ = 1(n ≤ k)` at the given service rates.
pub fn threshold(k: u64, mu1: f64, mu2: f64) -> SystemSpec {
    SystemSpec::base(RateFunction::threshold(k), mu1, mu2).expect("positive rates")
}

/// A stable system with a long prefix and a period-3 tail.
pub fn periodic() -> SystemSpec {
    let lambda = RateFunction::new(vec![0.4, 2.0, 0.1, 1.5, 0.0, 0.7], vec![0.2, 0.05, 0.6])
        .expect("valid rates");
    SystemSpec::base(lambda, 1.3, 0.9).expect("positive rates")
}

/// Non-monotone vanishing admission, stable at `mu1 = 0.2`.
pub fn speedup_paradox(mu1: f64) -> SystemSpec {
    let lambda = RateFunction::vanishing(vec![0.01, 0.01, 5.0]).expect("valid rates");
    SystemSpec::base(lambda, mu1, 1.0).expect("positive rates")
}
