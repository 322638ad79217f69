//! Explicit Lyapunov candidates `V_r(x) = x1 + v_r(x2)` and their mean drifts.
//!
//! Requiring `ΔV_r(x) = -r` whenever `x1 > 0` pins `v_r` down through the
//! increments `w(n) = v_r(n+1) - v_r(n)`:
//!
//! ```text
//! α(n) = 1 - (λ(n) + r)/μ1
//! w(0) = α(0),   w(n) = α(n) + (μ2/μ1) w(n-1)
//! ```
//!
//! The only states left to control are on the `x1 = 0` axis, where
//!
//! ```text
//! ΔV_r(0, n) = λ(n) - μ2 w(n-1)
//!            = (E λ(Z_n) - μ2 (1 - r/μ1) P(Z_n > 0)) / P(Z_n = n)
//! ```
//!
//! and `Z_n ~ geom_n(μ1/μ2)`. Both routes are evaluated and cross-checked.

use std::ops::{Add, Mul, Sub};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::ddouble::DoubleDouble;
use crate::error::{Error, Result};
use crate::geom_dist::limsup_expected_rate;
use crate::rate_model::{State, SystemSpec};

/// Scalar type a state function evaluates to.
pub trait DriftValue:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    const ZERO: Self;

    fn into_f64(self) -> f64;
}

impl DriftValue for f64 {
    const ZERO: Self = 0.0;

    fn into_f64(self) -> f64 {
        self
    }
}

impl DriftValue for DoubleDouble {
    const ZERO: Self = DoubleDouble::ZERO;

    fn into_f64(self) -> f64 {
        self.to_f64()
    }
}

/// A real-valued function on the state space.
pub trait StateFunction {
    type Value: DriftValue;

    fn value(&self, x: State) -> Self::Value;
}

impl<F> StateFunction for F
where
    F: Fn(State) -> f64,
{
    type Value = f64;

    fn value(&self, x: State) -> f64 {
        self(x)
    }
}

/// Mean drift `ΔV(x) = Σ_{y≠x} (V(y) - V(x)) q(x, y)`.
pub fn drift<V: StateFunction + ?Sized>(spec: &SystemSpec, v: &V, x: State) -> f64 {
    let here = v.value(x);
    spec.transitions(x)
        .iter()
        .fold(V::Value::ZERO, |acc, t| {
            acc + (v.value(t.target) - here) * t.rate
        })
        .into_f64()
}

#[derive(Debug, Default)]
struct Table {
    /// `w[n] = v(n+1) - v(n)`
    w: Vec<DoubleDouble>,
    /// `v[n]`, with `v[0] = 0`
    v: Vec<DoubleDouble>,
}

/// The candidate `V_r` for a base system, with a lazily grown table of
/// `v_r` values.
#[derive(Debug)]
pub struct LyapunovFn {
    r: f64,
    spec: SystemSpec,
    ratio: DoubleDouble,
    table: Mutex<Table>,
}

impl Clone for LyapunovFn {
    fn clone(&self) -> Self {
        let t = self.table.lock().expect("lyapunov table poisoned");
        LyapunovFn {
            r: self.r,
            spec: self.spec.clone(),
            ratio: self.ratio,
            table: Mutex::new(Table {
                w: t.w.clone(),
                v: t.v.clone(),
            }),
        }
    }
}

impl LyapunovFn {
    pub fn new(spec: &SystemSpec, r: f64) -> Result<Self> {
        spec.ensure_base()?;
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::OutOfRange {
                what: "drift margin r",
                value: r,
            });
        }
        Ok(LyapunovFn {
            r,
            spec: spec.clone(),
            ratio: DoubleDouble::div_f64(spec.mu2(), spec.mu1()),
            table: Mutex::new(Table {
                w: Vec::new(),
                v: vec![DoubleDouble::ZERO],
            }),
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    fn alpha(&self, n: u64) -> DoubleDouble {
        let load = DoubleDouble::from(self.spec.lambda().eval(n)) + self.r;
        DoubleDouble::from(1.0) - load.div(self.spec.mu1())
    }

    fn with_table<T>(&self, upto: u64, f: impl FnOnce(&Table) -> T) -> T {
        let mut t = self.table.lock().expect("lyapunov table poisoned");
        let need = upto as usize + 1;
        if t.v.len() < need {
            let target = need.max(2 * t.v.len());
            let grow = target - t.v.len();
            t.w.reserve(grow + 1);
            t.v.reserve(grow);
            while t.v.len() < target {
                let n = t.w.len();
                let w = match t.w.last() {
                    None => self.alpha(0),
                    Some(prev) => self.alpha(n as u64) + *prev * self.ratio,
                };
                let v = t.v[n] + w;
                t.w.push(w);
                t.v.push(v);
            }
        }
        f(&t)
    }

    pub(crate) fn v_extended(&self, n: u64) -> DoubleDouble {
        self.with_table(n, |t| t.v[n as usize])
    }

    /// `w(n) = v_r(n+1) - v_r(n)` in extended precision.
    pub(crate) fn increment_extended(&self, n: u64) -> DoubleDouble {
        self.with_table(n + 1, |t| t.w[n as usize])
    }

    /// `v_r(n) = Σ_{j<n} Σ_{k≤j} α(k) (μ1/μ2)^{k-j}`.
    pub fn v_value(&self, n: u64) -> f64 {
        self.v_extended(n).to_f64()
    }

    pub fn increment(&self, n: u64) -> f64 {
        self.increment_extended(n).to_f64()
    }

    /// `ΔV_r(0, n)` for `n ≥ 1`, evaluated from the increments and from the
    /// truncated geometric law; the two must agree to 1e-8 (relative once the
    /// magnitude exceeds one).
    pub fn boundary_drift(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::OutOfRange {
                what: "boundary level n (need n >= 1)",
                value: 0.0,
            });
        }
        let mut scan = BoundaryScan::new(self);
        loop {
            let row = scan.next_row()?;
            if row.n == n {
                return Ok(row.drift);
            }
        }
    }

    /// `V_r` at `x` as a plain double.
    pub fn value_f64(&self, x: State) -> f64 {
        self.value(x).to_f64()
    }
}

impl StateFunction for LyapunovFn {
    type Value = DoubleDouble;

    fn value(&self, x: State) -> DoubleDouble {
        self.v_extended(x.x2) + x.x1 as f64
    }
}

const ROUTE_TOLERANCE: f64 = 1e-8;

fn routes_agree(a: f64, b: f64) -> bool {
    (a - b).abs() <= ROUTE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub n: u64,
    pub drift: f64,
}

/// Walks `n = 1, 2, ...` keeping the truncated-geometric sums incrementally,
/// so a scan up to `n` costs O(n) instead of O(n²).
struct BoundaryScan<'a> {
    lyap: &'a LyapunovFn,
    z: f64,
    n: u64,
    /// weight of the top atom `j = n` (1 when anchored at `n`)
    top: f64,
    /// Σ_j λ(j) w_j, Σ_j w_j, Σ_{j≥1} w_j
    s_lambda: f64,
    s_all: f64,
    s_pos: f64,
}

impl<'a> BoundaryScan<'a> {
    fn new(lyap: &'a LyapunovFn) -> Self {
        let z = lyap.spec.rates().ratio();
        let l0 = lyap.spec.lambda().eval(0);
        BoundaryScan {
            lyap,
            z,
            n: 0,
            top: 1.0,
            s_lambda: l0,
            s_all: 1.0,
            s_pos: 0.0,
        }
    }

    fn next_row(&mut self) -> Result<DriftRow> {
        self.n += 1;
        let n = self.n;
        let lambda_n = self.lyap.spec.lambda().eval(n);
        if self.z > 1.0 {
            // weights z^{j-n}: rescale the previous sums by 1/z
            let inv = 1.0 / self.z;
            self.s_lambda = self.s_lambda * inv + lambda_n;
            self.s_all = self.s_all * inv + 1.0;
            self.s_pos = self.s_pos * inv + 1.0;
            self.top = 1.0;
        } else {
            self.top *= self.z;
            self.s_lambda += lambda_n * self.top;
            self.s_all += self.top;
            self.s_pos += self.top;
        }
        let (mu1, mu2, r) = (self.lyap.spec.mu1(), self.lyap.spec.mu2(), self.lyap.r);
        let e_lambda = self.s_lambda / self.s_all;
        let p_pos = self.s_pos / self.s_all;
        let p_top = self.top / self.s_all;
        let via_law = (e_lambda - mu2 * (1.0 - r / mu1) * p_pos) / p_top;

        let w_prev = self.lyap.increment_extended(n - 1);
        let via_increments = (DoubleDouble::from(lambda_n) - w_prev * mu2).to_f64();

        if !via_increments.is_finite() || !via_law.is_finite() || p_top < f64::MIN_POSITIVE {
            return Err(Error::Numerical(format!(
                "boundary drift at n={n} is not representable in double precision"
            )));
        }
        if !routes_agree(via_increments, via_law) {
            return Err(Error::InternalInconsistency(format!(
                "boundary drift routes disagree at n={n}: {via_increments} vs {via_law}"
            )));
        }
        Ok(DriftRow {
            n,
            drift: via_increments,
        })
    }
}

/// Outcome of searching `{V_r}` for a Lyapunov function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "camelCase")]
pub enum MarginSearch {
    Certified(Certificate),
    /// The drift criterion holds analytically but no finite exception set
    /// was confirmed within the scan budget.
    WindowExhausted {
        r: f64,
        scanned_to: u64,
    },
    CriterionFails {
        limsup_e: f64,
        mu_min: f64,
    },
}

impl MarginSearch {
    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            MarginSearch::Certified(c) => Some(c),
            _ => None,
        }
    }

    /// `(r, n0)` when certified.
    pub fn margin(&self) -> Option<(f64, u64)> {
        self.certificate().map(|c| (c.r, c.n0))
    }
}

/// Finite evidence that `V_r` satisfies Foster's criteria with exception
/// set `S0 = {0} × [0, n0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub r: f64,
    pub n0: u64,
    pub scan_end: u64,
    /// max of `ΔV_r(0, n)` over `n0 < n ≤ scan_end`
    pub max_boundary_drift: f64,
    /// `max(-r, max_boundary_drift)`: the drift bound outside `S0`
    pub max_drift_outside: f64,
    /// min of `v_r(n) - v_r(n-1)` over `n0 < n ≤ scan_end`
    pub min_increment: f64,
    pub table: Vec<DriftRow>,
}

impl Certificate {
    /// `v_r` increments stay above `ε/μ2` beyond `n0`, with `ε` the
    /// certified boundary margin, so `v_r → ∞`.
    pub fn growth_verified(&self, mu2: f64) -> bool {
        let eps = -self.max_boundary_drift;
        eps > 0.0 && self.min_increment >= eps / mu2 * (1.0 - 1e-9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    /// Consecutive compliant levels required beyond the last violation;
    /// `None` uses `m + 20p + 200`.
    pub window: Option<u64>,
    /// Hard cap on the scanned level.
    pub max_level: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            window: None,
            max_level: 200_000,
        }
    }
}

impl ScanConfig {
    pub fn window_for(&self, spec: &SystemSpec) -> u64 {
        self.window.unwrap_or_else(|| {
            let l = spec.lambda();
            l.tail_start() as u64 + 20 * l.period() as u64 + 200
        })
    }
}

/// Picks `r` as half the slack in `limsup E λ(Z_n) < min(μ1, μ2)` and
/// certifies a finite exception set for `V_r`.
pub fn find_margin(spec: &SystemSpec) -> Result<MarginSearch> {
    find_margin_with(spec, ScanConfig::default())
}

pub fn find_margin_with(spec: &SystemSpec, cfg: ScanConfig) -> Result<MarginSearch> {
    spec.ensure_base()?;
    spec.ensure_nondegenerate()?;
    let limsup_e = limsup_expected_rate(spec.lambda(), spec.rates().ratio())?;
    let mu_min = spec.rates().min();
    if !(limsup_e < mu_min) {
        return Ok(MarginSearch::CriterionFails { limsup_e, mu_min });
    }
    certify(spec, (mu_min - limsup_e) / 2.0, cfg)
}

/// Scans `ΔV_r(0, n)` for a fixed `r` until `window` consecutive levels
/// satisfy `ΔV_r(0, n) ≤ -r(1 - 1e-9)`.
pub fn certify(spec: &SystemSpec, r: f64, cfg: ScanConfig) -> Result<MarginSearch> {
    spec.ensure_base()?;
    spec.ensure_nondegenerate()?;
    let lyap = LyapunovFn::new(spec, r)?;
    let window = cfg.window_for(spec).max(1);
    let bound = -r * (1.0 - 1e-9);
    let mut scan = BoundaryScan::new(&lyap);
    let mut table = Vec::new();
    let mut n0 = 0u64;
    let mut overflowed = false;
    while scan.n < n0 + window && scan.n < cfg.max_level {
        match scan.next_row() {
            Ok(row) => {
                if row.drift > bound {
                    n0 = row.n;
                }
                table.push(row);
            }
            // v_r has outgrown double precision; past this point the drift
            // only diverges further in the same direction
            Err(Error::Numerical(_)) => {
                overflowed = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let scan_end = table.last().map_or(0, |row| row.n);
    let complete = scan_end >= n0 + window || (overflowed && scan_end > n0);
    if !complete {
        return Ok(MarginSearch::WindowExhausted {
            r,
            scanned_to: scan_end,
        });
    }
    let tail = &table[n0 as usize..];
    let max_boundary_drift = tail
        .iter()
        .map(|row| row.drift)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_increment = (n0 + 1..=scan_end)
        .map(|n| lyap.increment(n - 1))
        .fold(f64::INFINITY, f64::min);
    Ok(MarginSearch::Certified(Certificate {
        r,
        n0,
        scan_end,
        max_boundary_drift,
        max_drift_outside: max_boundary_drift.max(-r),
        min_increment,
        table,
    }))
}

/// Largest drift of `v` over `[0, m1] × [0, m2]` outside `S0 = {0} × [0, n0]`.
pub fn max_drift_outside<V: StateFunction + ?Sized>(
    spec: &SystemSpec,
    v: &V,
    n0: u64,
    m1: u64,
    m2: u64,
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for x1 in 0..=m1 {
        for x2 in 0..=m2 {
            if x1 == 0 && x2 <= n0 {
                continue;
            }
            worst = worst.max(drift(spec, v, State::new(x1, x2)));
        }
    }
    worst
}
