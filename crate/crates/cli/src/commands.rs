use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tandem_core::lyapunov::{certify, find_margin_with, MarginSearch, ScanConfig};
use tandem_core::numerics::{solve_stationary_with, SolverConfig};
use tandem_core::simulator::{assess, simulate, EmpiricalConfig, EmpiricalReport};
use tandem_core::stability::{
    phase_diagram, rate_grid, sensitivity_scan, threshold_answer, verdict, Axis,
};
use tandem_core::{SimConfig, SystemSpec, TrajectoryStats, TruncatedGrid, Verdict};

use crate::args::{Cli, Command, Format};
use crate::error::CliError;

/// `--spec` takes inline JSON when the value starts with `{`, a path otherwise.
pub fn load_spec(arg: &str) -> Result<SystemSpec, CliError> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg)
            .map_err(|e| CliError::Parse(format!("cannot read spec {arg}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("invalid spec: {e}")))
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn csv_writer(out: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::Writer::from_writer(out)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

const VERDICT_COLUMNS: [&str; 10] = [
    "status",
    "witness",
    "note",
    "E_lambda_Z",
    "limsup_E",
    "liminf_lambda",
    "mu_min",
    "z",
    "gap_lower",
    "gap_upper",
];

fn verdict_cells(v: &Verdict) -> Vec<String> {
    let c = &v.criteria;
    vec![
        format!("{:?}", v.status),
        v.witness.map(|w| format!("{w:?}")).unwrap_or_default(),
        v.note.map(|n| format!("{n:?}")).unwrap_or_default(),
        opt(c.e_lambda_z),
        c.limsup_e.to_string(),
        c.liminf_lambda.to_string(),
        c.mu_min.to_string(),
        c.z.to_string(),
        opt(v.gap.map(|g| g.lower)),
        opt(v.gap.map(|g| g.upper)),
    ]
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let format = cli.format.unwrap_or_else(|| cli.command.default_format());
    let mut out = sink(cli.output.as_deref())?;
    let out = out.as_mut();
    match cli.command {
        Command::Analyze { spec } => {
            let v = verdict(&load_spec(&spec)?)?;
            match format {
                Format::Json => write_json(out, &v)?,
                Format::Csv => {
                    let mut w = csv_writer(out);
                    w.write_record(VERDICT_COLUMNS)?;
                    w.write_record(verdict_cells(&v))?;
                    w.flush()?;
                }
            }
        }

        Command::PhaseDiagram {
            mu1_min,
            mu1_max,
            mu2_min,
            mu2_max,
            step,
        } => {
            let pts = phase_diagram(
                &rate_grid(mu1_min, mu1_max, step)?,
                &rate_grid(mu2_min, mu2_max, step)?,
            );
            match format {
                Format::Json => write_json(out, &pts)?,
                Format::Csv => {
                    let mut w = csv_writer(out);
                    w.write_record(["mu1", "mu2", "label"])?;
                    for p in &pts {
                        w.write_record([
                            p.mu1.to_string(),
                            p.mu2.to_string(),
                            p.label.to_string(),
                        ])?;
                    }
                    w.flush()?;
                }
            }
        }

        Command::Threshold { mu1, mu2 } => {
            // reuse the service-rate validation of the core types
            tandem_core::ServiceRates::new(mu1, mu2)?;
            let answer = threshold_answer(mu1, mu2);
            match format {
                Format::Json => write_json(out, &answer)?,
                Format::Csv => {
                    let value = serde_json::to_value(answer)?;
                    let mut w = csv_writer(out);
                    w.write_record(["kind", "K_max"])?;
                    w.write_record([
                        value["kind"].as_str().unwrap_or_default().to_string(),
                        value
                            .get("K_max")
                            .map(|k| k.to_string())
                            .unwrap_or_default(),
                    ])?;
                    w.flush()?;
                }
            }
        }

        Command::Lyapunov {
            spec,
            r,
            window,
            max_level,
        } => {
            let spec = load_spec(&spec)?;
            let cfg = ScanConfig { window, max_level };
            let search = match r {
                Some(r) => certify(&spec, r, cfg)?,
                None => find_margin_with(&spec, cfg)?,
            };
            match format {
                Format::Json => write_json(out, &search)?,
                Format::Csv => {
                    let mut w = csv_writer(out);
                    w.write_record(["n", "drift"])?;
                    if let MarginSearch::Certified(c) = &search {
                        for row in &c.table {
                            w.serialize((row.n, row.drift))?;
                        }
                    } else {
                        eprintln!("no certificate: {}", serde_json::to_string(&search)?);
                    }
                    w.flush()?;
                }
            }
        }

        Command::Stationary {
            spec,
            m1,
            m2,
            state_cap,
            tolerance,
            diagnostics,
        } => {
            let spec = load_spec(&spec)?;
            let grid = TruncatedGrid::new(m1, m2)?;
            let sol = solve_stationary_with(
                &spec,
                grid,
                &SolverConfig {
                    state_cap,
                    tolerance,
                },
            )?;
            let diag = Diagnostics {
                residual: sol.residual,
                escape_mass: sol.escape_mass,
            };
            match format {
                Format::Json => write_json(
                    out,
                    &StationaryJson {
                        m1,
                        m2,
                        residual: sol.residual,
                        escape_mass: sol.escape_mass,
                        pi: sol
                            .iter()
                            .map(|(x, probability)| Cell {
                                x1: x.x1,
                                x2: x.x2,
                                probability,
                            })
                            .collect(),
                    },
                )?,
                Format::Csv => {
                    let mut w = csv_writer(out);
                    w.write_record(["x1", "x2", "probability"])?;
                    for (x, p) in sol.iter() {
                        w.serialize((x.x1, x.x2, p))?;
                    }
                    w.flush()?;
                    write_diagnostics(diagnostics, &diag)?;
                }
            }
        }

        Command::Simulate {
            spec,
            horizon,
            reps,
            init,
            variant,
            max_events,
            series,
        } => {
            let mut spec = load_spec(&spec)?;
            if let Some(v) = variant {
                spec = spec.with_variant(v);
            }
            let cfg = SimConfig {
                seed: cli.seed,
                horizon,
                max_events,
                initial: init,
                replications: reps,
                record_series: series.is_some(),
            };
            cfg.validate()?;
            let mut stats = simulate(&spec, &cfg)?;
            if let Some(path) = series {
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(["t", "x1", "x2"])?;
                for p in stats[0].series.iter().flatten() {
                    w.serialize((p.t, p.x1, p.x2))?;
                }
                w.flush()?;
            }
            for s in &mut stats {
                s.series = None;
            }
            let empirical = (reps >= 5).then(|| assess(&stats, &EmpiricalConfig::default()));
            match format {
                Format::Json => write_json(
                    out,
                    &SimulationJson {
                        config: &cfg,
                        replications: &stats,
                        empirical,
                    },
                )?,
                Format::Csv => {
                    let mut w = csv_writer(out);
                    for s in &stats {
                        w.serialize(SimRow::from(s))?;
                    }
                    w.flush()?;
                }
            }
        }

        Command::Sensitivity {
            spec,
            axis,
            min,
            max,
            step,
        } => {
            let spec = load_spec(&spec)?;
            spec.ensure_nondegenerate()?;
            let fixed = match axis {
                Axis::Mu1 => spec.mu2(),
                Axis::Mu2 => spec.mu1(),
            };
            let rows = sensitivity_scan(spec.lambda(), fixed, axis, &rate_grid(min, max, step)?)?;
            match format {
                Format::Json => {
                    let rows: Vec<_> = rows
                        .iter()
                        .map(|(mu, verdict)| SensitivityJson { mu: *mu, verdict })
                        .collect();
                    write_json(out, &rows)?
                }
                Format::Csv => {
                    let mut w = csv_writer(out);
                    let mut header = vec!["mu"];
                    header.extend(VERDICT_COLUMNS);
                    w.write_record(header)?;
                    for (mu, v) in &rows {
                        let mut cells = vec![mu.to_string()];
                        cells.extend(verdict_cells(v));
                        w.write_record(cells)?;
                    }
                    w.flush()?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Diagnostics {
    residual: f64,
    escape_mass: f64,
}

fn write_diagnostics(path: Option<PathBuf>, diag: &Diagnostics) -> Result<(), CliError> {
    match path {
        Some(p) => write_json(&mut File::create(p)?, diag),
        None => write_json(&mut io::stderr().lock(), diag),
    }
}

#[derive(Serialize)]
struct Cell {
    x1: u64,
    x2: u64,
    probability: f64,
}

#[derive(Serialize)]
struct StationaryJson {
    m1: u64,
    m2: u64,
    residual: f64,
    escape_mass: f64,
    pi: Vec<Cell>,
}

#[derive(Serialize)]
struct SimulationJson<'a> {
    config: &'a SimConfig,
    replications: &'a [TrajectoryStats],
    #[serde(skip_serializing_if = "Option::is_none")]
    empirical: Option<EmpiricalReport>,
}

#[derive(Serialize)]
struct SimRow {
    replication: u64,
    seed: u64,
    elapsed: f64,
    events: u64,
    arrivals: u64,
    final_x1: u64,
    final_x2: u64,
    time_avg_x1: f64,
    time_avg_x2: f64,
    busy1_time: f64,
    cycles: usize,
    slope: f64,
}

impl From<&TrajectoryStats> for SimRow {
    fn from(s: &TrajectoryStats) -> Self {
        SimRow {
            replication: s.replication,
            seed: s.seed,
            elapsed: s.elapsed,
            events: s.events,
            arrivals: s.arrivals,
            final_x1: s.final_state.x1,
            final_x2: s.final_state.x2,
            time_avg_x1: s.time_avg_x1,
            time_avg_x2: s.time_avg_x2,
            busy1_time: s.busy1_time,
            cycles: s.cycles.len(),
            slope: s.slope,
        }
    }
}

#[derive(Serialize)]
struct SensitivityJson<'a> {
    mu: f64,
    verdict: &'a Verdict,
}
