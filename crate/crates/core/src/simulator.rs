//! Jump-chain simulation of the tandem CTMC.
//!
//! Replication `i` draws from `ChaCha8Rng::seed_from_u64(seed + i)`, so
//! results depend only on `(spec, config)` and never on thread scheduling.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::rate_model::{Mechanism, State, SystemSpec};

pub const DEFAULT_MAX_EVENTS: u64 = 10_000_000;
pub const MAX_SERIES_ROWS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub horizon: f64,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    #[serde(default)]
    pub initial: State,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// keep a decimated `(t, x1, x2)` path of at most [`MAX_SERIES_ROWS`] rows
    #[serde(default)]
    pub record_series: bool,
}

fn default_max_events() -> u64 {
    DEFAULT_MAX_EVENTS
}

fn default_replications() -> usize {
    1
}

impl SimConfig {
    pub fn new(seed: u64, horizon: f64, replications: usize) -> Self {
        SimConfig {
            seed,
            horizon,
            max_events: DEFAULT_MAX_EVENTS,
            initial: State::EMPTY,
            replications,
            record_series: false,
        }
    }

    pub fn with_initial(mut self, x: State) -> Self {
        self.initial = x;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon must be > 0 (got {})",
                self.horizon
            )));
        }
        if self.replications < 1 {
            return Err(Error::InvalidConfig("replications must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub x1: u64,
    pub x2: u64,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub x1: u64,
    pub x2: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub replication: u64,
    pub seed: u64,
    /// simulated time covered (the horizon unless stopped early)
    pub elapsed: f64,
    pub events: u64,
    pub arrivals: u64,
    pub final_state: State,
    pub time_avg_x1: f64,
    pub time_avg_x2: f64,
    /// time with `x1 > 0`
    pub busy1_time: f64,
    /// time-weighted visits, sorted by state
    pub occupancy: Vec<Occupancy>,
    /// lengths of completed cycles between entries into `(0, 0)`
    pub cycles: Vec<f64>,
    /// first entrance time into each named target set, when observed
    pub first_passage: BTreeMap<String, f64>,
    /// least-squares growth rate of `x1 + x2` over the trailing half
    pub slope: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub series: Option<Vec<SeriesPoint>>,
}

impl TrajectoryStats {
    pub fn occupancy_fraction(&self, x: State) -> f64 {
        self.occupancy
            .binary_search_by(|o| (o.x1, o.x2).cmp(&(x.x1, x.x2)))
            .map(|i| self.occupancy[i].time / self.elapsed)
            .unwrap_or(0.0)
    }
}

/// A named set of states for first-passage measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub id: String,
    pub states: Vec<State>,
}

/// Running moments for the continuous-time least-squares fit of `s(t)` on
/// `[start, ∞)`, in the shifted time `u = t - start`.
#[derive(Debug, Default)]
struct SlopeFit {
    start: f64,
    len: f64,
    s: f64,
    us: f64,
    uu: f64,
    u: f64,
}

impl SlopeFit {
    fn add(&mut self, t0: f64, t1: f64, value: f64) {
        let (a, b) = ((t0.max(self.start)) - self.start, t1 - self.start);
        if b <= a {
            return;
        }
        let d = b - a;
        let m1 = (b * b - a * a) / 2.0;
        self.len += d;
        self.s += value * d;
        self.u += m1;
        self.us += value * m1;
        self.uu += (b * b * b - a * a * a) / 3.0;
    }

    fn slope(&self) -> f64 {
        if self.len <= 0.0 {
            return 0.0;
        }
        let var = self.uu - self.u * self.u / self.len;
        if var <= 0.0 {
            return 0.0;
        }
        (self.us - self.u * self.s / self.len) / var
    }
}

struct Series {
    points: Vec<SeriesPoint>,
    stride: u64,
    seen: u64,
}

impl Series {
    fn new() -> Self {
        Series {
            points: Vec::new(),
            stride: 1,
            seen: 0,
        }
    }

    /// Keeps every `stride`-th point; on overflow drops every other stored
    /// point and doubles the stride.
    fn push(&mut self, p: SeriesPoint) {
        if self.seen % self.stride == 0 {
            self.points.push(p);
            if self.points.len() > MAX_SERIES_ROWS {
                let mut i = 0;
                self.points.retain(|_| {
                    i += 1;
                    i % 2 == 1
                });
                self.stride *= 2;
            }
        }
        self.seen += 1;
    }
}

/// Per-replication accumulators.
struct Run {
    index: u64,
    seed: u64,
    x: State,
    t: f64,
    events: u64,
    arrivals: u64,
    area1: f64,
    area2: f64,
    busy1: f64,
    occupancy: HashMap<State, f64>,
    cycles: Vec<f64>,
    last_regen: Option<f64>,
    passage: BTreeMap<String, f64>,
    fit: SlopeFit,
    series: Option<Series>,
}

impl Run {
    fn hold(&mut self, t_next: f64) {
        let dt = t_next - self.t;
        let x = self.x;
        self.area1 += x.x1 as f64 * dt;
        self.area2 += x.x2 as f64 * dt;
        if x.x1 > 0 {
            self.busy1 += dt;
        }
        *self.occupancy.entry(x).or_insert(0.0) += dt;
        self.fit.add(self.t, t_next, x.total() as f64);
        self.t = t_next;
    }

    fn jump(&mut self, to: State, targets: &[TargetSet]) {
        self.x = to;
        self.events += 1;
        let t = self.t;
        if let Some(s) = self.series.as_mut() {
            s.push(SeriesPoint {
                t,
                x1: to.x1,
                x2: to.x2,
            });
        }
        if to == State::EMPTY {
            if let Some(prev) = self.last_regen {
                self.cycles.push(t - prev);
            }
            self.last_regen = Some(t);
        }
        for target in targets {
            if !self.passage.contains_key(&target.id) && target.states.contains(&to) {
                self.passage.insert(target.id.clone(), t);
            }
        }
    }

    fn finish(self) -> TrajectoryStats {
        let mut occupancy: Vec<Occupancy> = self
            .occupancy
            .into_iter()
            .map(|(s, time)| Occupancy {
                x1: s.x1,
                x2: s.x2,
                time,
            })
            .collect();
        occupancy.sort_by_key(|o| (o.x1, o.x2));
        let norm = if self.t > 0.0 { self.t } else { 1.0 };
        TrajectoryStats {
            replication: self.index,
            seed: self.seed,
            elapsed: self.t,
            events: self.events,
            arrivals: self.arrivals,
            final_state: self.x,
            time_avg_x1: self.area1 / norm,
            time_avg_x2: self.area2 / norm,
            busy1_time: self.busy1,
            occupancy,
            cycles: self.cycles,
            first_passage: self.passage,
            slope: self.fit.slope(),
            series: self.series.map(|s| s.points),
        }
    }
}

fn run_replication(
    spec: &SystemSpec,
    cfg: &SimConfig,
    index: u64,
    targets: &[TargetSet],
    stop_when_hit: bool,
) -> Result<TrajectoryStats> {
    let seed = cfg.seed.wrapping_add(index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = cfg.horizon;
    let x = cfg.initial;
    let mut run = Run {
        index,
        seed,
        x,
        t: 0.0,
        events: 0,
        arrivals: 0,
        area1: 0.0,
        area2: 0.0,
        busy1: 0.0,
        occupancy: HashMap::new(),
        cycles: Vec::new(),
        last_regen: (x == State::EMPTY).then_some(0.0),
        passage: BTreeMap::new(),
        fit: SlopeFit {
            start: horizon / 2.0,
            ..Default::default()
        },
        series: cfg.record_series.then(Series::new),
    };
    if let Some(s) = run.series.as_mut() {
        s.push(SeriesPoint {
            t: 0.0,
            x1: x.x1,
            x2: x.x2,
        });
    }

    loop {
        let arcs = spec.transitions(run.x);
        let total: f64 = arcs.iter().map(|a| a.rate).sum();
        let hold: f64 = rng.sample::<f64, _>(Exp1) / total;
        run.hold((run.t + hold).min(horizon));
        if run.t >= horizon {
            break;
        }
        if run.events >= cfg.max_events {
            let time = run.t;
            return Err(Error::EventCapExceeded {
                replication: index,
                max_events: cfg.max_events,
                time,
                partial: Box::new(run.finish()),
            });
        }
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = arcs[arcs.len() - 1];
        for a in arcs.iter() {
            if pick < a.rate {
                chosen = *a;
                break;
            }
            pick -= a.rate;
        }
        if chosen.mechanism == Mechanism::Arrival {
            run.arrivals += 1;
        }
        run.jump(chosen.target, targets);
        if stop_when_hit && !targets.is_empty() && run.passage.len() == targets.len() {
            break;
        }
    }
    Ok(run.finish())
}

fn run_all(
    spec: &SystemSpec,
    cfg: &SimConfig,
    targets: &[TargetSet],
    stop_when_hit: bool,
) -> Result<Vec<TrajectoryStats>> {
    spec.ensure_nondegenerate()?;
    cfg.validate()?;
    (0..cfg.replications as u64)
        .into_par_iter()
        .map(|i| run_replication(spec, cfg, i, targets, stop_when_hit))
        .collect()
}

/// One [`TrajectoryStats`] per replication, in replication order.
pub fn simulate(spec: &SystemSpec, cfg: &SimConfig) -> Result<Vec<TrajectoryStats>> {
    run_all(spec, cfg, &[], false)
}

/// Like [`simulate`], also recording first entrance times into `targets`.
pub fn simulate_with_targets(
    spec: &SystemSpec,
    cfg: &SimConfig,
    targets: &[TargetSet],
) -> Result<Vec<TrajectoryStats>> {
    run_all(spec, cfg, targets, false)
}

/// Time-weighted occupancy pooled over replications, as fractions.
pub fn pooled_occupancy(stats: &[TrajectoryStats]) -> BTreeMap<State, f64> {
    let mut out = BTreeMap::new();
    let total: f64 = stats.iter().map(|s| s.elapsed).sum();
    for s in stats {
        for o in &s.occupancy {
            *out.entry(State::new(o.x1, o.x2)).or_insert(0.0) += o.time / total;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmpiricalVerdict {
    LooksStable,
    LooksUnstable,
    Undetermined,
}

/// Thresholds of the simulation-based stability heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalConfig {
    /// stable needs the slope CI half-width below this
    pub slope_half_width: f64,
    /// unstable needs the slope CI lower bound above this
    pub unstable_slope: f64,
    pub min_cycles: usize,
    /// largest relative change of the mean cycle length between the first
    /// and second half of the pooled cycles
    pub cycle_drift: f64,
    pub confidence: f64,
}

impl Default for EmpiricalConfig {
    fn default() -> Self {
        EmpiricalConfig {
            slope_half_width: 0.01,
            unstable_slope: 0.01,
            min_cycles: 20,
            cycle_drift: 0.5,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub verdict: EmpiricalVerdict,
    pub slope_mean: f64,
    pub slope_half_width: f64,
    pub cycles: usize,
}

/// Student-t interval for the mean of `xs`.
fn t_interval(xs: &[f64], confidence: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.5 + confidence / 2.0);
    (mean, t * (var / n).sqrt())
}

pub fn empirical_verdict(spec: &SystemSpec, cfg: &SimConfig) -> Result<EmpiricalVerdict> {
    Ok(empirical_report(spec, cfg, &EmpiricalConfig::default())?.verdict)
}

pub fn empirical_report(
    spec: &SystemSpec,
    cfg: &SimConfig,
    ecfg: &EmpiricalConfig,
) -> Result<EmpiricalReport> {
    if cfg.replications < 5 {
        return Err(Error::InvalidConfig(format!(
            "empirical verdict needs at least 5 replications (got {})",
            cfg.replications
        )));
    }
    // runs that hit the event cap are clearly not settling down
    let stats = match simulate(spec, cfg) {
        Ok(s) => s,
        Err(Error::EventCapExceeded { .. }) => {
            return Ok(EmpiricalReport {
                verdict: EmpiricalVerdict::LooksUnstable,
                slope_mean: f64::NAN,
                slope_half_width: f64::NAN,
                cycles: 0,
            })
        }
        Err(e) => return Err(e),
    };
    Ok(assess(&stats, ecfg))
}

/// Empirical verdict from replications that already ran to the horizon.
pub fn assess(stats: &[TrajectoryStats], ecfg: &EmpiricalConfig) -> EmpiricalReport {
    let slopes: Vec<f64> = stats.iter().map(|s| s.slope).collect();
    let (mean, hw) = t_interval(&slopes, ecfg.confidence);
    let cycles: Vec<f64> = stats
        .iter()
        .flat_map(|s| s.cycles.iter().copied())
        .collect();
    let cycle_mean_stable = {
        let half = cycles.len() / 2;
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let (a, b) = (avg(&cycles[..half]), avg(&cycles[half..]));
        half > 0 && (a - b).abs() <= ecfg.cycle_drift * 0.5 * (a + b)
    };
    let verdict = if mean - hw > ecfg.unstable_slope {
        EmpiricalVerdict::LooksUnstable
    } else if (mean - hw..=mean + hw).contains(&0.0)
        && hw < ecfg.slope_half_width
        && cycles.len() >= ecfg.min_cycles
        && cycle_mean_stable
    {
        EmpiricalVerdict::LooksStable
    } else {
        EmpiricalVerdict::Undetermined
    };
    EmpiricalReport {
        verdict,
        slope_mean: mean,
        slope_half_width: hw,
        cycles: cycles.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassageSummary {
    pub mean: f64,
    pub std_err: f64,
    /// 95% normal-approximation half-width
    pub half_width: f64,
    pub samples: usize,
    pub censored: usize,
}

/// Mean time until the first jump into `target`, starting from `from`.
/// Starting inside the target does not count: a jump back in is required.
pub fn first_passage(
    spec: &SystemSpec,
    cfg: &SimConfig,
    from: State,
    target: &[State],
) -> Result<PassageSummary> {
    if target.is_empty() {
        return Err(Error::InvalidConfig("target set is empty".into()));
    }
    let set = [TargetSet {
        id: "target".into(),
        states: target.to_vec(),
    }];
    let cfg = cfg.clone().with_initial(from);
    let stats = run_all(spec, &cfg, &set, true)?;
    let samples: Vec<f64> = stats
        .iter()
        .filter_map(|s| s.first_passage.get("target").copied())
        .collect();
    let censored = stats.len() - samples.len();
    if samples.is_empty() || 2 * censored > stats.len() {
        return Err(Error::Timeout {
            censored,
            replications: stats.len(),
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let std_err = (var / n).sqrt();
    Ok(PassageSummary {
        mean,
        std_err,
        half_width: 1.96 * std_err,
        samples: samples.len(),
        censored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{solve_stationary, TruncatedGrid};
    use crate::rate_model::{RateFunction, Variant};

    fn base(lambda: RateFunction, mu1: f64, mu2: f64) -> SystemSpec {
        SystemSpec::base(lambda, mu1, mu2).unwrap()
    }

    #[test]
    fn fast_service_keeps_queues_short() {
        let s = base(RateFunction::threshold(0), 100.0, 100.0);
        let st = &simulate(&s, &SimConfig::new(1, 1_000.0, 1)).unwrap()[0];
        assert!(st.time_avg_x1 + st.time_avg_x2 < 0.1);
        let weights: f64 = st.occupancy.iter().map(|o| o.time).sum();
        assert!((weights - st.elapsed).abs() < 1e-9 * st.elapsed);
        assert!(st.cycles.iter().all(|c| *c > 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let s = base(
            RateFunction::new(vec![1.0], vec![0.3, 0.6]).unwrap(),
            0.8,
            1.1,
        );
        let mut cfg = SimConfig::new(42, 500.0, 4);
        cfg.record_series = true;
        let a = simulate(&s, &cfg).unwrap();
        let b = simulate(&s, &cfg).unwrap();
        assert_eq!(a, b);
        // replication i does not depend on how many others run
        let solo = simulate(
            &s,
            &SimConfig {
                replications: 2,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(solo[..], a[..2]);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn overload_grows_linearly() {
        let s = base(RateFunction::constant(2.0).unwrap(), 1.0, 1.0);
        let st = &simulate(&s, &SimConfig::new(7, 10_000.0, 1)).unwrap()[0];
        assert!(st.slope > 0.5, "slope {}", st.slope);
    }

    #[test]
    fn event_cap_reports_partial_stats() {
        let s = base(RateFunction::constant(2.0).unwrap(), 1.0, 1.0);
        let cfg = SimConfig {
            max_events: 100,
            ..SimConfig::new(3, 1e6, 1)
        };
        match simulate(&s, &cfg) {
            Err(Error::EventCapExceeded {
                partial,
                max_events,
                ..
            }) => {
                assert_eq!(max_events, 100);
                assert_eq!(partial.events, 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn series_is_decimated() {
        let s = base(RateFunction::constant(0.5).unwrap(), 1.0, 1.0);
        let cfg = SimConfig {
            record_series: true,
            ..SimConfig::new(5, 200_000.0, 1)
        };
        let st = &simulate(&s, &cfg).unwrap()[0];
        let series = st.series.as_ref().unwrap();
        assert!(st.events as usize > MAX_SERIES_ROWS);
        assert!(series.len() <= MAX_SERIES_ROWS && series.len() > MAX_SERIES_ROWS / 4);
        assert!(series.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn slope_fit_recovers_a_line() {
        let mut fit = SlopeFit {
            start: 0.0,
            ..Default::default()
        };
        // staircase approximating s = 2 t
        let dt = 1e-3;
        for i in 0..10_000 {
            let t0 = i as f64 * dt;
            fit.add(t0, t0 + dt, 2.0 * (t0 + dt / 2.0));
        }
        assert!((fit.slope() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn throughput_balance() {
        let s = base(RateFunction::threshold(3), 1.0, 1.2);
        let stats = simulate(&s, &SimConfig::new(11, 50_000.0, 2)).unwrap();
        for st in &stats {
            let rate_in = st.arrivals as f64 / st.elapsed;
            let rate_out = s.mu1() * st.busy1_time / st.elapsed;
            assert!(
                (rate_in - rate_out).abs() <= 0.03 * rate_out,
                "{rate_in} vs {rate_out}"
            );
        }
    }

    #[test]
    fn occupancy_converges_to_stationary() {
        let s = base(RateFunction::threshold(2), 1.5, 1.2);
        let grid = TruncatedGrid::square(40).unwrap();
        let pi = solve_stationary(&s, grid).unwrap();
        let tv = |occ: &BTreeMap<State, f64>| {
            let mut sum = 0.0;
            for (x, p) in pi.iter() {
                sum += (p - occ.get(&x).copied().unwrap_or(0.0)).abs();
            }
            sum += occ
                .iter()
                .filter(|(x, _)| !grid.contains(**x))
                .map(|(_, p)| p)
                .sum::<f64>();
            0.5 * sum
        };
        let short = pooled_occupancy(&simulate(&s, &SimConfig::new(2, 20_000.0, 1)).unwrap());
        let long = pooled_occupancy(&simulate(&s, &SimConfig::new(2, 40_000.0, 1)).unwrap());
        let between: f64 = 0.5
            * short
                .keys()
                .chain(long.keys())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .map(|x| (short.get(x).unwrap_or(&0.0) - long.get(x).unwrap_or(&0.0)).abs())
                .sum::<f64>();
        assert!(between < 0.02, "{between}");
        assert!(tv(&long) < 0.05, "{}", tv(&long));
    }

    #[test]
    fn empirical_examples() {
        let cfg = SimConfig::new(9, 20_000.0, 5);
        let stable = base(RateFunction::threshold(4), 2.0, 0.5);
        assert_eq!(
            empirical_verdict(&stable, &cfg).unwrap(),
            EmpiricalVerdict::LooksStable
        );
        let unstable = base(RateFunction::threshold(4), 0.5, 2.0);
        assert_eq!(
            empirical_verdict(&unstable, &cfg).unwrap(),
            EmpiricalVerdict::LooksUnstable
        );
        assert!(empirical_verdict(&stable, &SimConfig::new(9, 100.0, 4)).is_err());
    }

    #[test]
    fn passage_in_saturated_band() {
        let k = 2;
        let (mu1, mu2) = (0.5, 1.0);
        let s = base(RateFunction::threshold(k), mu1, mu2).with_variant(Variant::SaturatedStar);
        let cfg = SimConfig::new(13, 1_000.0, 2_000);
        let out = first_passage(&s, &cfg, State::new(0, k + 3), &[State::new(0, k + 1)]).unwrap();
        let expect = 2.0 / (mu2 - mu1);
        assert!((out.mean - expect).abs() < 3.0 * out.std_err, "{out:?}");
        assert_eq!(out.censored, 0);
    }

    #[test]
    fn passage_from_inside_target_needs_a_jump() {
        let s = base(RateFunction::threshold(1), 1.0, 1.0);
        let cfg = SimConfig::new(1, 1_000.0, 50);
        let out = first_passage(&s, &cfg, State::EMPTY, &[State::EMPTY]).unwrap();
        assert!(out.mean > 0.5);
        let never = first_passage(
            &s,
            &SimConfig::new(1, 0.01, 10),
            State::EMPTY,
            &[State::new(50, 0)],
        );
        assert!(matches!(never, Err(Error::Timeout { .. })));
        assert!(first_passage(&s, &cfg, State::EMPTY, &[]).is_err());
    }
}
