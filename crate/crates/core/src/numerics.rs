//! Stationary distributions of the chain restricted to a finite box.
//!
//! Arcs that would leave `[0, M1] × [0, M2]` are dropped, which keeps the
//! truncated generator conservative. The escape mass measures how much
//! probability flow those dropped arcs carried.
//!
//! The generator is block tridiagonal in the node-1 level `x1`: arrivals raise
//! the level through a diagonal block, transfers lower it through a shift
//! block. The solver eliminates levels from the top down (linear level
//! reduction), so a solve costs `O(M1 · M2³)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom_dist::pmf_truncated;
use crate::rate_model::{State, SystemSpec, Variant};

pub const DEFAULT_STATE_CAP: usize = 25_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// The box `[0, m1] × [0, m2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncatedGrid {
    m1: u64,
    m2: u64,
}

impl TruncatedGrid {
    pub fn new(m1: u64, m2: u64) -> Result<Self> {
        if m1 < 1 || m2 < 1 {
            return Err(Error::InvalidConfig(format!(
                "truncation bounds must be >= 1 (got {m1}x{m2})"
            )));
        }
        Ok(TruncatedGrid { m1, m2 })
    }

    pub fn square(m: u64) -> Result<Self> {
        Self::new(m, m)
    }

    pub fn m1(&self) -> u64 {
        self.m1
    }

    pub fn m2(&self) -> u64 {
        self.m2
    }

    pub fn states(&self) -> usize {
        ((self.m1 + 1) * (self.m2 + 1)) as usize
    }

    pub fn contains(&self, x: State) -> bool {
        x.x1 <= self.m1 && x.x2 <= self.m2
    }

    fn index(&self, x: State) -> usize {
        (x.x1 * (self.m2 + 1) + x.x2) as usize
    }

    fn state(&self, i: usize) -> State {
        let w = self.m2 + 1;
        State::new(i as u64 / w, i as u64 % w)
    }

    /// States in storage order (`x1` slowest).
    pub fn iter(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.states()).map(|i| self.state(i))
    }
}

/// 40×40, 80×80, 120×120.
pub fn default_ladder() -> Vec<TruncatedGrid> {
    [40, 80, 120]
        .into_iter()
        .map(|m| TruncatedGrid::square(m).expect("positive"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub state_cap: usize,
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            state_cap: DEFAULT_STATE_CAP,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySolution {
    pub grid: TruncatedGrid,
    /// indexed like [`TruncatedGrid::iter`]
    pub pi: Vec<f64>,
    /// `max_y |(πQ)(y)|` over the truncated generator
    pub residual: f64,
    /// `Σ π(x) q_dropped(x) / Σ π(x) q_kept(x)`
    pub escape_mass: f64,
}

impl StationarySolution {
    pub fn prob(&self, x: State) -> f64 {
        if self.grid.contains(x) {
            self.pi[self.grid.index(x)]
        } else {
            0.0
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (State, f64)> + '_ {
        self.grid.iter().zip(self.pi.iter().copied())
    }

    pub fn marginal_x1(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.m1 as usize + 1];
        for (x, p) in self.iter() {
            out[x.x1 as usize] += p;
        }
        out
    }

    pub fn marginal_x2(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.m2 as usize + 1];
        for (x, p) in self.iter() {
            out[x.x2 as usize] += p;
        }
        out
    }

    /// `E f(X)` under π.
    pub fn expectation(&self, f: impl Fn(State) -> f64) -> f64 {
        self.iter().map(|(x, p)| p * f(x)).sum()
    }

    pub fn probability(&self, event: impl Fn(State) -> bool) -> f64 {
        self.iter().filter(|(x, _)| event(*x)).map(|(_, p)| p).sum()
    }

    pub fn mean_total(&self) -> f64 {
        self.expectation(|x| x.total() as f64)
    }

    /// Mass on the outer faces `x1 = M1` or `x2 = M2`.
    pub fn boundary_mass(&self) -> f64 {
        let g = self.grid;
        self.probability(|x| x.x1 == g.m1 || x.x2 == g.m2)
    }

    /// Total variation distance, with each distribution extended by zero.
    pub fn total_variation(&self, other: &StationarySolution) -> f64 {
        let mut sum = 0.0;
        for (x, p) in self.iter() {
            sum += (p - other.prob(x)).abs();
        }
        for (x, q) in other.iter() {
            if !self.grid.contains(x) {
                sum += q;
            }
        }
        0.5 * sum
    }
}

/// `½ Σ |p_i - q_i|`, the shorter vector padded with zeros.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    0.5 * (0..n).map(|i| (at(p, i) - at(q, i)).abs()).sum::<f64>()
}

pub fn solve_stationary(spec: &SystemSpec, grid: TruncatedGrid) -> Result<StationarySolution> {
    solve_stationary_with(spec, grid, &SolverConfig::default())
}

pub fn solve_stationary_with(
    spec: &SystemSpec,
    grid: TruncatedGrid,
    cfg: &SolverConfig,
) -> Result<StationarySolution> {
    spec.ensure_nondegenerate()?;
    let states = grid.states();
    if states > cfg.state_cap {
        return Err(Error::GridTooLarge {
            states,
            cap: cfg.state_cap,
        });
    }
    let levels = grid.m1 as usize + 1;
    let b = grid.m2 as usize + 1;
    let mu1 = spec.mu1();
    let arrival: Vec<f64> = (0..b).map(|j| spec.lambda().eval(j as u64)).collect();

    // within-level block of level k; kept out-rates sit on the diagonal
    let local = |k: usize| -> DMatrix<f64> {
        let mut a = DMatrix::<f64>::zeros(b, b);
        for j in 0..b {
            let x = State::new(k as u64, j as u64);
            let mut out = 0.0;
            for t in spec.transitions(x) {
                if !grid.contains(t.target) {
                    continue;
                }
                out += t.rate;
                if t.target.x1 == x.x1 {
                    a[(j, t.target.x2 as usize)] += t.rate;
                }
            }
            a[(j, j)] -= out;
        }
        a
    };
    let invert = |u: DMatrix<f64>, k: usize| -> Result<DMatrix<f64>> {
        u.lu().try_inverse().ok_or_else(|| {
            Error::Numerical(format!(
                "level {k} block is singular during level reduction"
            ))
        })
    };

    // r[k] = -B_{k-1} U_k^{-1}, so that π_k = π_{k-1} r[k]
    let mut r: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); levels];
    let mut u = local(levels - 1);
    for k in (1..levels).rev() {
        let mut rk = invert(u, k)?;
        for i in 0..b {
            let scale = -arrival[i];
            rk.row_mut(i).scale_mut(scale);
        }
        // U_{k-1} = A_{k-1} + R_k C_k, where C_k moves j to j+1 at rate μ1
        let mut next = local(k - 1);
        for i in 0..b {
            for j in 0..b - 1 {
                next[(i, j + 1)] += rk[(i, j)] * mu1;
            }
        }
        // U_{k-1} is the generator of the chain censored to level k-1, killed
        // by transfers down. Rebuilding its diagonal from the off-diagonal
        // entries avoids the cancellation that ruins overloaded systems.
        for i in 0..b {
            let killed = if k > 1 && i + 1 < b { mu1 } else { 0.0 };
            let off: f64 = (0..b).filter(|&j| j != i).map(|j| next[(i, j)]).sum();
            next[(i, i)] = -(off + killed);
        }
        r[k] = rk;
        u = next;
    }

    // π_0 U_0 = 0 with π_0(0) pinned to 1
    let mut sys = u.transpose();
    for j in 0..b {
        sys[(0, j)] = 0.0;
    }
    sys[(0, 0)] = 1.0;
    let mut rhs = DVector::<f64>::zeros(b);
    rhs[0] = 1.0;
    let pi0 = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("boundary level system is singular".into()))?;

    let mut pi = Vec::with_capacity(states);
    let mut level = pi0.transpose();
    pi.extend(level.iter().copied());
    for rk in r.iter().skip(1) {
        level = &level * rk;
        // mass can pile up far from the origin; keep the running vector finite
        let peak = level.amax();
        if peak > 1e150 {
            let s = peak.recip();
            pi.iter_mut().for_each(|p| *p *= s);
            level.scale_mut(s);
        }
        pi.extend(level.iter().copied());
    }
    for p in pi.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Numerical(format!(
            "stationary vector has total mass {total}"
        )));
    }
    for p in pi.iter_mut() {
        *p /= total;
    }

    let (residual, escape_mass) = diagnostics(spec, grid, &pi);
    if !(residual <= cfg.tolerance) {
        return Err(Error::SolverFailure { residual });
    }
    Ok(StationarySolution {
        grid,
        pi,
        residual,
        escape_mass,
    })
}

fn diagnostics(spec: &SystemSpec, grid: TruncatedGrid, pi: &[f64]) -> (f64, f64) {
    let mut balance = vec![0.0; pi.len()];
    let (mut kept, mut dropped) = (0.0, 0.0);
    for (i, x) in grid.iter().enumerate() {
        for t in spec.transitions(x) {
            let flow = pi[i] * t.rate;
            if grid.contains(t.target) {
                kept += flow;
                balance[grid.index(t.target)] += flow;
                balance[i] -= flow;
            } else {
                dropped += flow;
            }
        }
    }
    let residual = balance.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let escape = if kept > 0.0 { dropped / kept } else { 0.0 };
    (residual, escape)
}

/// Residuals of the stationary identities of the saturated chain `S^N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    /// `|E λ(X2) - μ2 P(X2 > 0) + μ1 P(X1 = 0, X2 < N)|`
    pub drift_balance: f64,
    /// `max_n |P(X2 = n+1) - z (P(X2 = n) - 1(n ≥ N) P(X1 = 0, X2 = n))|`
    pub level_balance: f64,
    /// `max_{j ≤ N} |P(X2 = j) - P(Z_N = j) P(X2 ≤ N)|`; covers every `f`
    pub conditional: f64,
    pub escape_mass: f64,
}

impl SaturationReport {
    pub fn max_residual(&self) -> f64 {
        self.drift_balance
            .max(self.level_balance)
            .max(self.conditional)
    }
}

/// `spec` must be `SaturatedN(N)` (or `Base`, which is `N = 0`) and match
/// the chain `sol` was computed for.
pub fn check_saturation_identities(
    spec: &SystemSpec,
    sol: &StationarySolution,
) -> Result<SaturationReport> {
    let n_sat = match spec.variant() {
        Variant::SaturatedN(n) => n,
        Variant::Base => 0,
        Variant::SaturatedStar => {
            return Err(Error::UnsupportedVariant {
                expected: "saturatedN",
            })
        }
    };
    let (mu1, mu2) = (spec.mu1(), spec.mu2());
    let z = spec.rates().ratio();
    let lambda = spec.lambda();

    let e_lambda = sol.expectation(|x| lambda.eval(x.x2));
    let p_busy2 = sol.probability(|x| x.x2 > 0);
    let p_idle_low = sol.probability(|x| x.x1 == 0 && x.x2 < n_sat);
    let drift_balance = (e_lambda - mu2 * p_busy2 + mu1 * p_idle_low).abs();

    let marg = sol.marginal_x2();
    let idle: Vec<f64> = (0..marg.len() as u64)
        .map(|j| sol.prob(State::new(0, j)))
        .collect();
    // balance across the cut between x2 = n and n + 1; unrolling it gives the
    // closed form in powers of z, which loses all precision once z > 1
    let mut level_balance = 0.0f64;
    for n in 0..marg.len() - 1 {
        let saturated = if (n as u64) < n_sat { 0.0 } else { idle[n] };
        let gap = mu2 * marg[n + 1] - mu1 * (marg[n] - saturated);
        level_balance = level_balance.max(gap.abs() / mu2);
    }

    let top = (n_sat as usize).min(marg.len() - 1);
    let p_low: f64 = marg[..=top].iter().sum();
    let law = pmf_truncated(z, top as u64)?;
    let conditional = (0..=top)
        .map(|j| (marg[j] - law[j] * p_low).abs())
        .fold(0.0, f64::max);

    Ok(SaturationReport {
        drift_balance,
        level_balance,
        conditional,
        escape_mass: sol.escape_mass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleVerdict {
    LooksStable,
    LooksUnstable,
    Undetermined,
}

/// Thresholds of the truncation-based stability heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub escape_tol: f64,
    pub tv_tol: f64,
    pub boundary_mass: f64,
    /// minimum growth of `E(x1 + x2)` per unit growth of `M1 + M2`
    pub drift_fraction: f64,
    pub solver: SolverConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            escape_tol: 1e-6,
            tv_tol: 1e-6,
            boundary_mass: 1e-2,
            drift_fraction: 0.25,
            solver: SolverConfig::default(),
        }
    }
}

pub fn oracle_verdict(spec: &SystemSpec, ladder: &[TruncatedGrid]) -> Result<OracleVerdict> {
    Ok(oracle_report(spec, ladder, &OracleConfig::default())?.verdict)
}

pub fn oracle_verdict_with(
    spec: &SystemSpec,
    ladder: &[TruncatedGrid],
    cfg: &OracleConfig,
) -> Result<OracleVerdict> {
    Ok(oracle_report(spec, ladder, cfg)?.verdict)
}

/// Diagnostics of one grid in the ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub m1: u64,
    pub m2: u64,
    pub escape_mass: f64,
    pub boundary_mass: f64,
    pub mean_total: f64,
    /// total variation distance to the previous rung
    pub tv_previous: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub verdict: OracleVerdict,
    pub rungs: Vec<Rung>,
}

pub fn oracle_report(
    spec: &SystemSpec,
    ladder: &[TruncatedGrid],
    cfg: &OracleConfig,
) -> Result<OracleReport> {
    spec.ensure_nondegenerate()?;
    if ladder.len() < 2 {
        return Err(Error::InvalidConfig(
            "grid ladder needs at least two grids".into(),
        ));
    }
    let sols = ladder
        .par_iter()
        .map(|g| solve_stationary_with(spec, *g, &cfg.solver))
        .collect::<Result<Vec<_>>>()?;
    let rungs: Vec<Rung> = sols
        .iter()
        .enumerate()
        .map(|(i, s)| Rung {
            m1: s.grid.m1,
            m2: s.grid.m2,
            escape_mass: s.escape_mass,
            boundary_mass: s.boundary_mass(),
            mean_total: s.mean_total(),
            tv_previous: (i > 0).then(|| s.total_variation(&sols[i - 1])),
        })
        .collect();
    let last = &rungs[rungs.len() - 1];
    let verdict = if last.escape_mass < cfg.escape_tol
        && last.tv_previous.is_some_and(|tv| tv < cfg.tv_tol)
    {
        OracleVerdict::LooksStable
    } else if rungs.iter().all(|r| r.boundary_mass >= cfg.boundary_mass)
        || rungs.windows(2).all(|w| {
            let grow = (w[1].m1 + w[1].m2) as f64 - (w[0].m1 + w[0].m2) as f64;
            grow > 0.0 && w[1].mean_total - w[0].mean_total >= cfg.drift_fraction * grow
        })
    {
        OracleVerdict::LooksUnstable
    } else {
        OracleVerdict::Undetermined
    };
    Ok(OracleReport { verdict, rungs })
}

/// Grows a box from `start` toward whichever outer face holds more mass
/// until two successive boxes both leak less than a hundredth of the escape
/// tolerance, or the state cap stops growth. Returns the last three boxes.
pub fn adaptive_ladder(spec: &SystemSpec, cfg: &OracleConfig) -> Result<Vec<TruncatedGrid>> {
    adaptive_ladder_from(spec, cfg, TruncatedGrid::square(20)?, 1.5)
}

pub fn adaptive_ladder_from(
    spec: &SystemSpec,
    cfg: &OracleConfig,
    start: TruncatedGrid,
    growth: f64,
) -> Result<Vec<TruncatedGrid>> {
    if !(growth > 1.0) {
        return Err(Error::InvalidConfig(format!(
            "ladder growth must exceed 1 (got {growth})"
        )));
    }
    let target = cfg.escape_tol * 1e-2;
    let cap = cfg.solver.state_cap;
    let grow = |m: u64| ((m as f64 * growth).ceil() as u64).max(m + 1);
    let mut visited = vec![start];
    let mut below = 0;
    let mut g = start;
    loop {
        let sol = solve_stationary_with(spec, g, &cfg.solver)?;
        below = if sol.escape_mass < target {
            below + 1
        } else {
            0
        };
        if below >= 2 {
            break;
        }
        let face1 = sol.probability(|x| x.x1 == g.m1);
        let face2 = sol.probability(|x| x.x2 == g.m2);
        let mut candidates = Vec::new();
        if face1 >= face2 {
            candidates.push(TruncatedGrid::new(grow(g.m1), g.m2)?);
            candidates.push(TruncatedGrid::new(g.m1, grow(g.m2))?);
        } else {
            candidates.push(TruncatedGrid::new(g.m1, grow(g.m2))?);
            candidates.push(TruncatedGrid::new(grow(g.m1), g.m2)?);
        }
        match candidates.into_iter().find(|c| c.states() <= cap) {
            Some(next) => {
                g = next;
                visited.push(g);
            }
            None => break,
        }
    }
    if visited.len() == 1 {
        visited.insert(
            0,
            TruncatedGrid::new((start.m1 / 2).max(1), (start.m2 / 2).max(1))?,
        );
    }
    let keep = visited.len().saturating_sub(3);
    Ok(visited.split_off(keep))
}
