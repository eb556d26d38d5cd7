//! `burstopt` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 runtime or solver
//! guard error. Log level comes from `BURSTOPT_LOG` (e.g. `BURSTOPT_LOG=debug`).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "burstopt", version, about = "Bandwidth planning under 95th-percentile billing")]
struct Cli {
    #[command(flatten)]
    config: Config,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Config {
    /// Slots per billing cycle.
    #[arg(long, global = true, default_value_t = 672)]
    pub tau: usize,
    /// Slot length in seconds; utility is taken of `slot_seconds * Mbps`.
    #[arg(long, global = true, default_value_t = 3600.0)]
    pub slot_seconds: f64,
    /// Billed percentile as a fraction.
    #[arg(long, global = true, default_value_t = 0.95)]
    pub percentile: f64,
    /// Price per Mbps of billed percentile; repeat once per provider.
    #[arg(long = "price", global = true, default_values_t = vec![15.0])]
    pub prices: Vec<f64>,
    /// Utility curvature `a`.
    #[arg(long = "utility-a", global = true, default_value_t = 0.1)]
    pub utility_a: f64,
    /// Utility factor `A`.
    #[arg(long = "utility-A", global = true, default_value_t = 0.08)]
    pub utility_factor: f64,
    /// Tangent lines per realization in MILP export.
    #[arg(long, global = true, default_value_t = 3)]
    pub tangents: usize,
    #[arg(long, global = true, value_enum, default_value_t = Solver::Sweep)]
    pub solver: Solver,
    #[arg(long, global = true, value_enum, default_value_t = Forecast::Stochastic)]
    pub forecast: Forecast,
    /// Seed for synthetic traces.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for rolling cycles and sweep points (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory; without it the main artifact goes to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Multiplier from trace units to Mbps.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub unit_scale: f64,
    /// Number of providers for MILP export; prices are repeated if only one is given.
    #[arg(long, global = true)]
    pub providers: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Solver {
    Sweep,
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Forecast {
    Deterministic,
    Stochastic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Param {
    Price,
    UtilityFactor,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Percentile bill of each full cycle in a usage trace.
    Bill { usage: PathBuf },
    /// Plan the next cycle from a trace, or plan a scenario file.
    Plan {
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        trace: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Rolling evaluation of Baseline, Ideal, Deterministic and Stochastic.
    Simulate { trace: PathBuf },
    /// Rolling evaluation over a grid of prices or utility factors.
    Sweep {
        trace: PathBuf,
        #[arg(long, value_enum)]
        param: Param,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
    },
    /// Write the planning MILP of a scenario in LP format.
    ExportMilp { scenario: PathBuf },
    /// Single- against multi-provider sourcing; needs two or more prices.
    CompareProviders { trace: PathBuf },
    /// Write a synthetic bursty trace.
    Synth {
        #[arg(long, default_value_t = 4)]
        cycles: usize,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<burstopt::Error> for Failure {
    fn from(e: burstopt::Error) -> Self {
        Self {
            code: if e.is_validation() { 2 } else { 3 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.config.jobs)
        .build()
        .map_err(|e| Failure::runtime(e.to_string()))?;
    let cfg = &cli.config;
    pool.install(|| match &cli.command {
        Command::Bill { usage } => commands::bill(cfg, usage),
        Command::Plan { trace, scenario } => commands::plan(cfg, trace.as_deref(), scenario.as_deref()),
        Command::Simulate { trace } => commands::simulate(cfg, trace),
        Command::Sweep { trace, param, grid } => commands::sweep(cfg, trace, *param, grid),
        Command::ExportMilp { scenario } => commands::export_milp(cfg, scenario),
        Command::CompareProviders { trace } => commands::compare_providers(cfg, trace),
        Command::Synth { cycles } => commands::synth(cfg, *cycles),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("BURSTOPT_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
