#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

/// Errors raised by the front end itself.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

#[derive(Parser, Debug)]
#[command(name = "gpdflow", version, about = "Multivariate threshold-exceedance modeling with normalizing-flow generators")]
pub struct Cli {
    /// Seed for every random draw
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for replicate-level work (results do not depend on it)
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Primary output file (stdout when omitted)
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// JSON file of flag values; command-line flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (repeatable)
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a dataset
    Simulate(SimulateArgs),
    /// Negative log returns from price files
    Returns(ReturnsArgs),
    /// Choose a threshold from the χ / ω plateau diagnostics
    SelectThreshold(SelectArgs),
    /// Fit a model to threshold exceedances
    Fit(FitArgs),
    /// Draw samples from a fitted model
    Sample(SampleArgs),
    /// Log-density of rows under a fitted model
    Density(DensityArgs),
    /// Tail dependence of a fitted model
    Chi(ChiArgs),
    /// CoVaR table from a fitted model
    Covar(CovarArgs),
}

pub const SUBCOMMANDS: &[&str] = &[
    "simulate",
    "returns",
    "select-threshold",
    "fit",
    "sample",
    "density",
    "chi",
    "covar",
];

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum GeneratorKind {
    /// Independent reverse-exponential generator (parametric mGPD)
    Revexp,
    /// Independent Gumbel generator (parametric mGPD)
    Gumbel,
    /// Bivariate Gumbel copula with Gaussian margins (raw data)
    GumbelCopula,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub generator: GeneratorKind,
    /// Dimension (mGPD generators)
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Number of rows (default 100, or 1200 for the copula)
    #[arg(long)]
    pub n: Option<usize>,
    /// Copula dependence parameter
    #[arg(long, default_value_t = 1.3, allow_negative_numbers = true)]
    pub theta: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub sigma: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub gamma: Option<Vec<f64>>,
    /// Reverse-exponential scales
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub a: Option<Vec<f64>>,
    /// Reverse-exponential shifts
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Option<Vec<f64>>,
    /// Gumbel generator rates
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub alpha: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct ReturnsArgs {
    /// Price CSV files (date column, then asset columns)
    #[arg(long, required = true, value_delimiter = ',')]
    pub input: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    #[arg(long, default_value_t = 0.5)]
    pub q_min: f64,
    #[arg(long, default_value_t = 0.995)]
    pub q_max: f64,
    #[arg(long, default_value_t = 0.005)]
    pub q_step: f64,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Raw data CSV
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Use this q* instead of plateau detection
    #[arg(long)]
    pub q_override: Option<f64>,
    #[arg(long, default_value_t = 8)]
    pub window: usize,
    #[arg(long, default_value_t = 0.05)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 5)]
    pub min_tail: usize,
    #[arg(long, default_value_t = 10.0)]
    pub min_expected: f64,
    /// Bootstrap replicates for the report bands (0 disables)
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// χ̂ / ω̂ report CSV
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Exceedance dataset CSV at the selected threshold
    #[arg(long)]
    pub exceedances: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Exceedance CSV, or raw data together with a threshold
    #[arg(long)]
    pub input: PathBuf,
    /// Threshold to subtract from raw input
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "threshold_from")]
    pub threshold: Option<Vec<f64>>,
    /// Threshold summary JSON written by select-threshold
    #[arg(long)]
    pub threshold_from: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = gpdflow::model::DEFAULT_LR)]
    pub lr: f64,
    /// Step size at the last epoch relative to --lr (geometric decay)
    #[arg(long, default_value_t = gpdflow::model::DEFAULT_LR_FINAL_FACTOR)]
    pub lr_final_factor: f64,
    /// Loss jump over the best epoch (relative) that restores the best parameters and halves the step size
    #[arg(long, default_value_t = gpdflow::model::DEFAULT_SPIKE_TOLERANCE)]
    pub spike_tolerance: f64,
    /// Coupling layers
    #[arg(long, default_value_t = 16)]
    pub layers: usize,
    /// Hidden widths of the coupling networks (default 4d)
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Support-penalty weight
    #[arg(long, default_value_t = 1e4)]
    pub lambda: f64,
    /// Trapezoid nodes per density evaluation
    #[arg(long, default_value_t = 200)]
    pub nodes: usize,
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    pub init_gamma: f64,
    /// Per-epoch loss CSV
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Add the model threshold back (original data units)
    #[arg(long)]
    pub original: bool,
}

#[derive(Args, Debug)]
pub struct DensityArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Rows to evaluate (exceedance scale unless --original)
    #[arg(long)]
    pub input: PathBuf,
    /// Input is in original units; the model threshold is subtracted first
    #[arg(long)]
    pub original: bool,
}

#[derive(Args, Debug)]
pub struct ChiArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Generator draws for χ and ω
    #[arg(long, default_value_t = gpdflow::dependence::DEFAULT_MC_DRAWS)]
    pub n_mc: usize,
    /// Model samples for the empirical χ̂(q) / ω̂(q) curves
    #[arg(long, default_value_t = 100_000)]
    pub n_samples: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    /// JSON summary with generator-based estimates and the pairwise χ table
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CovarArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Raw data CSV (original units) used for VaR_β and the exceedance size
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95])]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 0.95)]
    pub beta: f64,
    /// Pairs `target:conditioner` (0-based); all ordered pairs by default
    #[arg(long, value_delimiter = ',')]
    pub pairs: Option<Vec<String>>,
    /// Samples per replicate (default: number of exceedance rows in the data)
    #[arg(long)]
    pub n_mc: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Also write the empirical CoVaR table here
    #[arg(long)]
    pub empirical: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use gpdflow::Error as E;
    if let Some(e) = err.downcast_ref::<CliError>() {
        return match e {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        };
    }
    if let Some(e) = err.downcast_ref::<E>() {
        return match e {
            E::Input(_) | E::Usage(_) | E::Parameter(_) | E::Precondition(_) => 2,
            E::Data(_)
            | E::EmptyExceedance
            | E::Io(_)
            | E::Format { .. }
            | E::UnsupportedVersion { .. }
            | E::SampleSize(_)
            | E::Support(_) => 3,
            E::Numeric(_)
            | E::Training { .. }
            | E::NonFiniteLoss { .. }
            | E::NonFiniteGradient { .. }
            | E::Underflow { .. }
            | E::Domain(_)
            | E::DegenerateGenerator { .. } => 4,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    1
}

fn parse() -> Result<Cli, anyhow::Error> {
    let raw: Vec<std::ffi::OsString> = std::env::args_os().collect();
    let args = match config::find_config(&raw) {
        Some(p) => config::merge(raw, config::load_tokens(p.as_ref())?, SUBCOMMANDS),
        None => raw,
    };
    let matches = Cli::command().args_override_self(true).try_get_matches_from(args);
    let matches = match matches {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    Ok(Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit()))
}

fn main() -> ExitCode {
    let cli = match parse() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
