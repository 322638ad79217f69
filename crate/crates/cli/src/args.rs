use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use tandem_core::stability::Axis;
use tandem_core::{State, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "tandem",
    version,
    about = "Stability analysis for a two-node tandem queue with downstream-driven admission",
    args_override_self = true
)]
pub struct Cli {
    /// JSON object of flag values for the subcommand; keys are long flag
    /// names, explicit flags win over the file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// write the result here instead of stdout
    #[arg(long, short, global = true, value_name = "FILE")]
    pub output: Option<PathBuf>,

    /// output encoding [default: csv for phase-diagram, stationary and
    /// sensitivity; json otherwise]
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// base seed; replication i uses seed + i
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form stability verdict with witness and criteria
    #[command(args_override_self = true)]
    Analyze {
        /// system spec: a JSON file path or inline JSON
        #[arg(long)]
        spec: String,
    },

    /// Phase label (A1..A4) of every (mu1, mu2) pair on a grid
    #[command(args_override_self = true)]
    PhaseDiagram {
        #[arg(long, default_value_t = 0.05)]
        mu1_min: f64,
        #[arg(long, default_value_t = 3.0)]
        mu1_max: f64,
        #[arg(long, default_value_t = 0.05)]
        mu2_min: f64,
        #[arg(long, default_value_t = 3.0)]
        mu2_max: f64,
        /// grid resolution along both axes
        #[arg(long, default_value_t = 0.05)]
        step: f64,
    },

    /// Which admission thresholds stabilize the given service rates
    #[command(args_override_self = true)]
    Threshold {
        #[arg(long)]
        mu1: f64,
        #[arg(long)]
        mu2: f64,
    },

    /// Search for a certified Lyapunov function and report the drift table
    #[command(args_override_self = true)]
    Lyapunov {
        /// system spec: a JSON file path or inline JSON
        #[arg(long)]
        spec: String,
        /// drift margin to certify [default: half the criterion slack]
        #[arg(long)]
        r: Option<f64>,
        /// compliant levels required past the last violation
        /// [default: prefix + 20 periods + 200]
        #[arg(long)]
        window: Option<u64>,
        #[arg(long, default_value_t = 200_000)]
        max_level: u64,
    },

    /// Stationary distribution on a truncated box
    #[command(args_override_self = true)]
    Stationary {
        /// system spec: a JSON file path or inline JSON
        #[arg(long)]
        spec: String,
        /// largest x1 kept
        #[arg(long, default_value_t = 80)]
        m1: u64,
        /// largest x2 kept
        #[arg(long, default_value_t = 80)]
        m2: u64,
        #[arg(long, default_value_t = 25_000)]
        state_cap: usize,
        /// largest accepted residual max|pi Q|
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
        /// where the CSV format puts the diagnostics block [default: stderr]
        #[arg(long, value_name = "FILE")]
        diagnostics: Option<PathBuf>,
    },

    /// Simulate the chain and report per-replication statistics
    #[command(args_override_self = true)]
    Simulate {
        /// system spec: a JSON file path or inline JSON
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 10_000.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// initial state as x1,x2
        #[arg(long, default_value = "0,0")]
        init: State,
        /// override the spec variant: base, saturatedStar or saturatedN:<N>
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long, default_value_t = 10_000_000)]
        max_events: u64,
        /// write the decimated path of replication 0 as CSV (t, x1, x2)
        #[arg(long, value_name = "FILE")]
        series: Option<PathBuf>,
    },

    /// Verdicts along one service-rate axis, the other rate taken from the spec
    #[command(args_override_self = true)]
    Sensitivity {
        /// system spec: a JSON file path or inline JSON
        #[arg(long)]
        spec: String,
        #[arg(long, value_parser = Axis::from_str)]
        axis: Axis,
        #[arg(long)]
        min: f64,
        #[arg(long)]
        max: f64,
        #[arg(long)]
        step: f64,
    },
}

impl Command {
    pub fn default_format(&self) -> Format {
        match self {
            Command::PhaseDiagram { .. }
            | Command::Stationary { .. }
            | Command::Sensitivity { .. } => Format::Csv,
            _ => Format::Json,
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    match s {
        "base" => Ok(Variant::Base),
        "saturatedStar" => Ok(Variant::SaturatedStar),
        _ => s
            .strip_prefix("saturatedN:")
            .and_then(|n| n.parse().ok())
            .map(Variant::SaturatedN)
            .ok_or_else(|| {
                format!("unknown variant {s:?} (expected base, saturatedStar or saturatedN:<N>)")
            }),
    }
}

/// Subcommand names, for locating the subcommand when expanding `--config`.
pub const COMMANDS: &[&str] = &[
    "analyze",
    "phase-diagram",
    "threshold",
    "lyapunov",
    "stationary",
    "simulate",
    "sensitivity",
];

/// Global flags that take a value.
pub const VALUED_GLOBALS: &[&str] = &["--config", "--output", "-o", "--format", "--seed"];
