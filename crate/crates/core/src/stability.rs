//! Stability verdicts, the threshold-admission problem and the phase map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom_dist::{expected_rate_geometric, limit_bundle, limsup_expected_rate};
use crate::lyapunov::{find_margin, MarginSearch};
use crate::rate_model::{RateFunction, ServiceRates, SystemSpec, Threshold};

/// Relative width of the band around each strict inequality inside which
/// no verdict is issued.
pub const CRITICAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictStatus {
    Stable,
    Unstable,
    Inconclusive,
}

/// Which result decided the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Witness {
    /// an explicit Lyapunov certificate
    T2,
    /// node 1 is the bottleneck: `E λ(Z)` against `μ1`
    T4,
    /// node 2 is the bottleneck: `limsup E λ(Z_n)` and `liminf λ` against `μ2`
    T5,
    /// eventually vanishing `λ`, `μ1 < μ2`
    T6i,
    /// eventually vanishing `λ`, `μ1 ≥ μ2`
    T6ii,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictNote {
    /// The deciding quantity sits within the critical band of its threshold.
    CriticalBoundary,
}

/// The quantities the verdict is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    /// `E λ(Z)` with `Z ~ geom(μ1/μ2)`; only defined for `μ1 < μ2`.
    #[serde(rename = "E_lambda_Z")]
    pub e_lambda_z: Option<f64>,
    #[serde(rename = "limsup_E")]
    pub limsup_e: f64,
    pub liminf_lambda: f64,
    pub mu_min: f64,
    pub z: f64,
}

impl Criteria {
    pub fn compute(lambda: &RateFunction, rates: ServiceRates) -> Result<Self> {
        let z = rates.ratio();
        let e_lambda_z = if z < 1.0 {
            Some(expected_rate_geometric(lambda, z)?)
        } else {
            None
        };
        Ok(Criteria {
            e_lambda_z,
            limsup_e: limsup_expected_rate(lambda, z)?,
            liminf_lambda: lambda.cycle_min(),
            mu_min: rates.min(),
            z,
        })
    }
}

/// Closed interval `[lower, upper]` left open by the necessary and the
/// sufficient condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    pub criteria: Criteria,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<Gap>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<VerdictNote>,
}

impl Verdict {
    fn decided(status: VerdictStatus, witness: Witness, criteria: Criteria) -> Self {
        Verdict {
            status,
            witness: Some(witness),
            criteria,
            gap: None,
            note: None,
        }
    }

    fn critical(witness: Witness, criteria: Criteria) -> Self {
        Verdict {
            status: VerdictStatus::Inconclusive,
            witness: Some(witness),
            criteria,
            gap: None,
            note: Some(VerdictNote::CriticalBoundary),
        }
    }

    pub fn is_stable(&self) -> bool {
        self.status == VerdictStatus::Stable
    }

    pub fn is_unstable(&self) -> bool {
        self.status == VerdictStatus::Unstable
    }
}

/// Where `value` sits relative to `threshold` once the critical band is
/// taken out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Below,
    Within,
    Above,
}

fn compare(value: f64, threshold: f64) -> Side {
    let band = CRITICAL_TOLERANCE * threshold.abs();
    if value < threshold - band {
        Side::Below
    } else if value > threshold + band {
        Side::Above
    } else {
        Side::Within
    }
}

/// Analytic verdict for a base system.
pub fn verdict(spec: &SystemSpec) -> Result<Verdict> {
    spec.ensure_base()?;
    spec.ensure_nondegenerate()?;
    let lambda = spec.lambda();
    let criteria = Criteria::compute(lambda, spec.rates())?;
    let (mu1, mu2) = (spec.mu1(), spec.mu2());
    let vanishing = lambda.is_eventually_vanishing();

    if mu1 < mu2 {
        let e = criteria.e_lambda_z.expect("defined for mu1 < mu2");
        let witness = if vanishing { Witness::T6i } else { Witness::T4 };
        return Ok(match compare(e, mu1) {
            Side::Below => Verdict::decided(VerdictStatus::Stable, witness, criteria),
            Side::Above => Verdict::decided(VerdictStatus::Unstable, witness, criteria),
            Side::Within => Verdict::critical(witness, criteria),
        });
    }
    if vanishing {
        return Ok(Verdict::decided(
            VerdictStatus::Stable,
            Witness::T6ii,
            criteria,
        ));
    }
    let sufficient = compare(criteria.limsup_e, mu2);
    let necessary = compare(criteria.liminf_lambda, mu2);
    Ok(match (sufficient, necessary) {
        (Side::Below, _) => Verdict::decided(VerdictStatus::Stable, Witness::T5, criteria),
        (_, Side::Above) => Verdict::decided(VerdictStatus::Unstable, Witness::T5, criteria),
        (Side::Within, _) | (_, Side::Within) => Verdict::critical(Witness::T5, criteria),
        _ => Verdict {
            status: VerdictStatus::Inconclusive,
            witness: Some(Witness::T5),
            criteria,
            gap: Some(Gap {
                lower: criteria.liminf_lambda,
                upper: criteria.limsup_e,
            }),
            note: None,
        },
    })
}

/// Verdict backed by an explicit Lyapunov certificate: Stable with witness
/// `T2` when one is found, otherwise the analytic verdict.
pub fn lyapunov_verdict(spec: &SystemSpec) -> Result<(Verdict, MarginSearch)> {
    let search = find_margin(spec)?;
    let mut v = verdict(spec)?;
    if search.certificate().is_some() {
        v = Verdict::decided(VerdictStatus::Stable, Witness::T2, v.criteria);
    }
    Ok((v, search))
}

/// Ergodicity of the single `·/M/1` queue with state-dependent input rate
/// `λ(n)` and service rate `μ2`: the series `Σ λ(0)⋯λ(n)/μ2^{n+1}` converges.
pub fn single_server_stable(lambda: &RateFunction, mu2: f64) -> bool {
    if lambda.has_zero() {
        return true;
    }
    let cycle = lambda.cycle();
    let log_mean = cycle.iter().map(|c| c.ln()).sum::<f64>() / cycle.len() as f64;
    log_mean < mu2.ln()
}

/// `(μ1, μ2) ∈ R_K`, i.e. `1 - (μ1/μ2)^{K+1} < min(μ1, μ2)`.
pub fn region_membership(k: Threshold, mu1: f64, mu2: f64) -> bool {
    let min = mu1.min(mu2);
    match k {
        Threshold::Infinite => min > 1.0,
        Threshold::Finite(_) if mu1 >= mu2 || mu1 >= 1.0 => true,
        Threshold::Finite(k) => {
            // z^{K+1} > 1 - μ1 with both sides in (0, 1); logs avoid underflow
            let z = mu1 / mu2;
            (k as f64 + 1.0) * z.ln() > (-mu1).ln_1p()
        }
    }
}

/// The set of thresholds `K` for which `1(x2 ≤ K)` admission stabilizes
/// the network. It is always downward closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ThresholdAnswer {
    /// every `K`, including no control at all
    AllK,
    AllFiniteK,
    UpToKmax {
        #[serde(rename = "K_max")]
        k_max: u64,
    },
    NoK,
}

impl ThresholdAnswer {
    pub fn admits(&self, k: Threshold) -> bool {
        match (self, k) {
            (ThresholdAnswer::AllK, _) => true,
            (ThresholdAnswer::AllFiniteK, Threshold::Finite(_)) => true,
            (ThresholdAnswer::UpToKmax { k_max }, Threshold::Finite(k)) => k <= *k_max,
            _ => false,
        }
    }
}

pub fn threshold_answer(mu1: f64, mu2: f64) -> ThresholdAnswer {
    let unbounded = if region_membership(Threshold::Infinite, mu1, mu2) {
        ThresholdAnswer::AllK
    } else {
        ThresholdAnswer::AllFiniteK
    };
    if mu1 >= mu2 || mu1 >= 1.0 {
        return unbounded;
    }
    // K + 1 < ln(1-μ1)/ln(z)
    let t = (-mu1).ln_1p() / (mu1 / mu2).ln();
    let mut k = t.ceil() - 2.0;
    let member = |k: f64| k >= 0.0 && region_membership(Threshold::Finite(k as u64), mu1, mu2);
    while member(k + 1.0) {
        k += 1.0;
    }
    while k >= 0.0 && !member(k) {
        k -= 1.0;
    }
    if k < 0.0 {
        ThresholdAnswer::NoK
    } else {
        ThresholdAnswer::UpToKmax { k_max: k as u64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhaseLabel {
    /// stable without control
    A1,
    /// stabilized by every threshold
    A2,
    /// stabilized by some thresholds only
    A3,
    /// no threshold stabilizes
    A4,
}

impl std::fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PhaseLabel::A1 => "A1",
            PhaseLabel::A2 => "A2",
            PhaseLabel::A3 => "A3",
            PhaseLabel::A4 => "A4",
        };
        f.write_str(s)
    }
}

pub fn phase_classify(mu1: f64, mu2: f64) -> PhaseLabel {
    if mu1.min(mu2) > 1.0 {
        PhaseLabel::A1
    } else if mu1 >= mu2 || mu1 >= 1.0 {
        PhaseLabel::A2
    } else if region_membership(Threshold::Finite(0), mu1, mu2) {
        PhaseLabel::A3
    } else {
        PhaseLabel::A4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub mu1: f64,
    pub mu2: f64,
    pub label: PhaseLabel,
}

/// Labels for every `(μ1, μ2)` pair, `μ1` varying slowest.
pub fn phase_diagram(mu1_grid: &[f64], mu2_grid: &[f64]) -> Vec<PhasePoint> {
    mu1_grid
        .iter()
        .flat_map(|&mu1| {
            mu2_grid.iter().map(move |&mu2| PhasePoint {
                mu1,
                mu2,
                label: phase_classify(mu1, mu2),
            })
        })
        .collect()
}

/// `lo, lo + step, ...` up to `hi` (inclusive up to rounding).
pub fn rate_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && step > 0.0 && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "rate grid needs 0 < lo <= hi and step > 0 (got lo={lo}, hi={hi}, step={step})"
        )));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| lo + i as f64 * step).collect())
}

/// `f(x) = (1-x) Σ λ(n) x^n` and its derivative for eventually vanishing `λ`.
pub fn generating_fn(lambda: &RateFunction, x: f64) -> Result<(f64, f64)> {
    if !lambda.is_eventually_vanishing() {
        return Err(Error::NotVanishing);
    }
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::OutOfRange {
            what: "x (need 0 < x < 1)",
            value: x,
        });
    }
    let m = lambda.tail_start() as u64;
    let mut f = 0.0;
    let mut fprime = 0.0;
    let mut pow = 1.0;
    for n in 0..=m {
        let (here, next) = (lambda.eval(n), lambda.eval(n + 1));
        f += here * pow;
        fprime += (n + 1) as f64 * (next - here) * pow;
        pow *= x;
    }
    Ok(((1.0 - x) * f, fprime))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Mu1,
    Mu2,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mu1" => Ok(Axis::Mu1),
            "mu2" => Ok(Axis::Mu2),
            other => Err(format!("unknown axis {other:?} (expected mu1 or mu2)")),
        }
    }
}

/// Verdicts along one service-rate axis with the other rate held at
/// `mu_fixed`. Output order follows `grid`.
pub fn sensitivity_scan(
    lambda: &RateFunction,
    mu_fixed: f64,
    axis: Axis,
    grid: &[f64],
) -> Result<Vec<(f64, Verdict)>> {
    grid.par_iter()
        .map(|&mu| {
            let (mu1, mu2) = match axis {
                Axis::Mu1 => (mu, mu_fixed),
                Axis::Mu2 => (mu_fixed, mu),
            };
            let spec = SystemSpec::base(lambda.clone(), mu1, mu2)?;
            Ok((mu, verdict(&spec)?))
        })
        .collect()
}

/// Convenience: the alternating-rate limsup `(μ1 b + μ2 a)/(μ1 + μ2)` is
/// the largest residue limit of a two-cycle when `μ1 ≥ μ2`.
pub fn alternating_limsup(a: f64, b: f64, mu1: f64, mu2: f64) -> Result<f64> {
    let lambda = RateFunction::new(vec![], vec![a, b])?;
    Ok(limit_bundle(&lambda, mu1 / mu2)?.limsup_e)
}
