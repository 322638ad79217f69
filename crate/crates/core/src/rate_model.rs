//! System parameters and the transition-rate maps of the three model variants.
//!
//! The base chain `S(λ, μ1, μ2)` moves from `x` to
//!
//! ```text
//! x + e1        at rate λ(x2)
//! x - e1 + e2   at rate μ1   (x1 > 0)
//! x - e2        at rate μ2   (x2 > 0)
//! ```
//!
//! The saturated variants add an extra `x + e2` arc at rate μ1 while node 1
//! is empty: below level `N` for [`Variant::SaturatedN`], always for
//! [`Variant::SaturatedStar`].

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input-rate map `λ: Z+ → R+`, stored as a finite prefix followed by a
/// cycle repeated forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RateFunctionRepr", into = "RateFunctionRepr")]
pub struct RateFunction {
    prefix: Vec<f64>,
    cycle: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RateFunctionRepr {
    #[serde(default)]
    prefix: Vec<f64>,
    cycle: Vec<f64>,
}

impl TryFrom<RateFunctionRepr> for RateFunction {
    type Error = Error;

    fn try_from(repr: RateFunctionRepr) -> Result<Self> {
        RateFunction::new(repr.prefix, repr.cycle)
    }
}

impl From<RateFunction> for RateFunctionRepr {
    fn from(f: RateFunction) -> Self {
        RateFunctionRepr {
            prefix: f.prefix,
            cycle: f.cycle,
        }
    }
}

impl RateFunction {
    pub fn new(prefix: Vec<f64>, cycle: Vec<f64>) -> Result<Self> {
        if cycle.is_empty() {
            return Err(Error::InvalidRateFunction("cycle must be nonempty".into()));
        }
        if let Some(bad) = prefix
            .iter()
            .chain(cycle.iter())
            .find(|v| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidRateFunction(format!(
                "rates must be finite and nonnegative, got {bad}"
            )));
        }
        Ok(RateFunction { prefix, cycle })
    }

    /// `λ ≡ c`.
    pub fn constant(c: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![c])
    }

    /// Threshold admission `λ(n) = 1(n ≤ K)` at unit offered rate.
    pub fn threshold(k: u64) -> Self {
        RateFunction {
            prefix: vec![1.0; k as usize + 1],
            cycle: vec![0.0],
        }
    }

    /// Threshold admission with `K = ∞` maps to the uncontrolled system.
    pub fn threshold_policy(k: Threshold) -> Self {
        match k {
            Threshold::Finite(k) => Self::threshold(k),
            Threshold::Infinite => RateFunction {
                prefix: Vec::new(),
                cycle: vec![1.0],
            },
        }
    }

    /// Finite list of rates followed by zeros.
    pub fn vanishing(values: Vec<f64>) -> Result<Self> {
        Self::new(values, vec![0.0])
    }

    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    pub fn cycle(&self) -> &[f64] {
        &self.cycle
    }

    /// Index `m` at which the periodic tail starts.
    pub fn tail_start(&self) -> usize {
        self.prefix.len()
    }

    pub fn period(&self) -> usize {
        self.cycle.len()
    }

    /// Total evaluation of `λ(n)`.
    pub fn eval(&self, n: u64) -> f64 {
        let m = self.prefix.len() as u64;
        if n < m {
            self.prefix[n as usize]
        } else {
            self.cycle[((n - m) % self.cycle.len() as u64) as usize]
        }
    }

    /// `λ(n) = 0` for all large `n`.
    pub fn is_eventually_vanishing(&self) -> bool {
        self.cycle.iter().all(|&c| c == 0.0)
    }

    pub fn is_eventually_constant(&self) -> bool {
        self.cycle.iter().all(|&c| c == self.cycle[0])
    }

    /// Checked on the prefix, the junction and one full period including the
    /// wrap-around back to the cycle start.
    pub fn is_nonincreasing(&self) -> bool {
        let horizon = (self.tail_start() + self.period()) as u64;
        (0..horizon).all(|n| self.eval(n + 1) <= self.eval(n))
    }

    pub fn sup(&self) -> f64 {
        self.prefix
            .iter()
            .chain(self.cycle.iter())
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn cycle_min(&self) -> f64 {
        self.cycle.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn cycle_max(&self) -> f64 {
        self.cycle.iter().copied().fold(0.0, f64::max)
    }

    pub fn has_zero(&self) -> bool {
        self.prefix
            .iter()
            .chain(self.cycle.iter())
            .any(|&v| v == 0.0)
    }

    /// `c·λ`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.prefix.iter().map(|v| v * c).collect(),
            self.cycle.iter().map(|v| v * c).collect(),
        )
    }
}

/// Admission threshold `K ∈ Z+ ∪ {∞}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threshold {
    Finite(u64),
    Infinite,
}

impl std::str::FromStr for Threshold {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(Threshold::Infinite),
            other => other
                .parse()
                .map(Threshold::Finite)
                .map_err(|e| format!("invalid threshold {other:?}: {e}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ServiceRatesRepr")]
pub struct ServiceRates {
    mu1: f64,
    mu2: f64,
}

#[derive(Deserialize)]
struct ServiceRatesRepr {
    mu1: f64,
    mu2: f64,
}

impl TryFrom<ServiceRatesRepr> for ServiceRates {
    type Error = Error;

    fn try_from(r: ServiceRatesRepr) -> Result<Self> {
        ServiceRates::new(r.mu1, r.mu2)
    }
}

impl ServiceRates {
    pub fn new(mu1: f64, mu2: f64) -> Result<Self> {
        let ok = |m: f64| m.is_finite() && m > 0.0;
        if ok(mu1) && ok(mu2) {
            Ok(ServiceRates { mu1, mu2 })
        } else {
            Err(Error::InvalidServiceRates { mu1, mu2 })
        }
    }

    pub fn mu1(&self) -> f64 {
        self.mu1
    }

    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    /// `z = μ1/μ2`, the ratio of the geometric laws that govern node 2.
    pub fn ratio(&self) -> f64 {
        self.mu1 / self.mu2
    }

    pub fn min(&self) -> f64 {
        self.mu1.min(self.mu2)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.mu1 * c, self.mu2 * c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Variant {
    /// The original network `S`.
    #[default]
    Base,
    /// `S^N`: extra `x + e2` arc at rate μ1 when `x1 = 0, x2 < N`.
    #[serde(rename = "saturatedN")]
    SaturatedN(u64),
    /// `S*`: extra `x + e2` arc at rate μ1 whenever `x1 = 0`.
    SaturatedStar,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct State {
    pub x1: u64,
    pub x2: u64,
}

impl State {
    pub const EMPTY: State = State { x1: 0, x2: 0 };

    pub const fn new(x1: u64, x2: u64) -> Self {
        State { x1, x2 }
    }

    pub fn total(&self) -> u64 {
        self.x1 + self.x2
    }
}

impl std::str::FromStr for State {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| format!("expected x1,x2 but got {s:?}"))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<u64>()
                .map_err(|e| format!("invalid coordinate {t:?}: {e}"))
        };
        Ok(State::new(parse(a)?, parse(b)?))
    }
}

/// Which mechanism produced a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Arrival,
    Transfer,
    Departure,
    Saturation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub target: State,
    pub rate: f64,
    pub mechanism: Mechanism,
}

/// At most four positive-rate arcs leave any state.
pub type Transitions = ArrayVec<Transition, 4>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemSpecRepr", into = "SystemSpecRepr")]
pub struct SystemSpec {
    lambda: RateFunction,
    rates: ServiceRates,
    variant: Variant,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSpecRepr {
    lambda: RateFunction,
    mu1: f64,
    mu2: f64,
    #[serde(default)]
    variant: Variant,
}

impl TryFrom<SystemSpecRepr> for SystemSpec {
    type Error = Error;

    fn try_from(r: SystemSpecRepr) -> Result<Self> {
        Ok(SystemSpec::new(
            r.lambda,
            ServiceRates::new(r.mu1, r.mu2)?,
            r.variant,
        ))
    }
}

impl From<SystemSpec> for SystemSpecRepr {
    fn from(s: SystemSpec) -> Self {
        SystemSpecRepr {
            lambda: s.lambda,
            mu1: s.rates.mu1,
            mu2: s.rates.mu2,
            variant: s.variant,
        }
    }
}

impl SystemSpec {
    pub fn new(lambda: RateFunction, rates: ServiceRates, variant: Variant) -> Self {
        SystemSpec {
            lambda,
            rates,
            variant,
        }
    }

    pub fn base(lambda: RateFunction, mu1: f64, mu2: f64) -> Result<Self> {
        Ok(Self::new(
            lambda,
            ServiceRates::new(mu1, mu2)?,
            Variant::Base,
        ))
    }

    pub fn lambda(&self) -> &RateFunction {
        &self.lambda
    }

    pub fn rates(&self) -> ServiceRates {
        self.rates
    }

    pub fn mu1(&self) -> f64 {
        self.rates.mu1
    }

    pub fn mu2(&self) -> f64 {
        self.rates.mu2
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        SystemSpec {
            variant,
            ..self.clone()
        }
    }

    pub fn with_rates(&self, rates: ServiceRates) -> Self {
        SystemSpec {
            rates,
            ..self.clone()
        }
    }

    /// Analysis entry points reject `λ(0) = 0`: the chain is then reducible.
    pub fn ensure_nondegenerate(&self) -> Result<()> {
        if self.lambda.eval(0) > 0.0 {
            Ok(())
        } else {
            Err(Error::Degenerate)
        }
    }

    pub fn ensure_base(&self) -> Result<()> {
        match self.variant {
            Variant::Base => Ok(()),
            _ => Err(Error::UnsupportedVariant { expected: "base" }),
        }
    }

    /// Positive-rate arcs out of `x`, one entry per mechanism.
    pub fn transitions(&self, x: State) -> Transitions {
        let mut out = Transitions::new();
        let arrival = self.lambda.eval(x.x2);
        if arrival > 0.0 {
            out.push(Transition {
                target: State::new(x.x1 + 1, x.x2),
                rate: arrival,
                mechanism: Mechanism::Arrival,
            });
        }
        if x.x1 > 0 {
            out.push(Transition {
                target: State::new(x.x1 - 1, x.x2 + 1),
                rate: self.rates.mu1,
                mechanism: Mechanism::Transfer,
            });
        }
        if x.x2 > 0 {
            out.push(Transition {
                target: State::new(x.x1, x.x2 - 1),
                rate: self.rates.mu2,
                mechanism: Mechanism::Departure,
            });
        }
        if self.saturation_active(x) {
            out.push(Transition {
                target: State::new(x.x1, x.x2 + 1),
                rate: self.rates.mu1,
                mechanism: Mechanism::Saturation,
            });
        }
        out
    }

    fn saturation_active(&self, x: State) -> bool {
        x.x1 == 0
            && match self.variant {
                Variant::Base => false,
                Variant::SaturatedN(n) => x.x2 < n,
                Variant::SaturatedStar => true,
            }
    }

    /// `q(x) = Σ_{y≠x} q(x, y)`.
    pub fn total_rate(&self, x: State) -> f64 {
        self.transitions(x).iter().map(|t| t.rate).sum()
    }

    /// Uniform bound on `q(x)`; finite, so the minimal process never explodes.
    pub fn rate_bound(&self) -> f64 {
        self.lambda.sup() + 2.0 * self.rates.mu1 + self.rates.mu2
    }
}
