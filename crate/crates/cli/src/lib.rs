//! The `sess` command-line tool.
//!
//! ```text
//! sess simulate --config sim.toml --out data/
//! sess fit --x data/X.csv --y data/Y.csv --groups data/groups.toml --out fit/
//! sess eval --estimate fit/estimate.csv --b-true data/B_true.csv --groups data/groups.toml
//! sess bench --config grid.toml --reps 20 --threads 8 --out bench/
//! ```
//!
//! Exit codes: 2 parse or configuration error, 3 I/O error, 4 dimension
//! mismatch, 5 engine failure.

mod bench;
mod commands;
mod manifest;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sess_core::Error;

pub use manifest::RunManifest;

/// Forces a single worker thread whatever `--threads` says.
pub const SINGLE_THREADED_ENV: &str = "SESS_SINGLE_THREADED";

#[derive(Debug, Parser)]
#[command(name = "sess", version, about = "Sequential stepwise screening for grouped multiresponse regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit on CSV data and write the sparse estimate and selection trace.
    Fit(FitArgs),
    /// Score an estimate against the truth and/or held-out data.
    Eval(EvalArgs),
    /// Run a simulation grid and aggregate the replicates.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TuningArgs {
    /// Engine config (TOML); flags below override it.
    #[arg(long)]
    pub engine_config: Option<PathBuf>,
    /// Weight of the model-size penalty.
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Weight of the combinatorial penalty.
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Fixed threshold, or `auto` to derive it.
    #[arg(long, value_parser = parse_rho)]
    pub rho: Option<Rho>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rho {
    Auto,
    Fixed(f64),
}

fn parse_rho(s: &str) -> Result<Rho, String> {
    if s == "auto" {
        return Ok(Rho::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(Rho::Fixed(v)),
        _ => Err(format!("expected a nonnegative number or `auto`, got `{s}`")),
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Predictors, dense CSV with a header line.
    #[arg(long)]
    pub x: PathBuf,
    /// Responses, dense CSV with a header line.
    #[arg(long)]
    pub y: PathBuf,
    /// Group definitions (TOML).
    #[arg(long)]
    pub groups: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

/// `n0=K`: size of the training part of a random split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub n0: usize,
}

fn parse_split(s: &str) -> Result<Split, String> {
    let value = s
        .strip_prefix("n0=")
        .ok_or_else(|| format!("expected `n0=K`, got `{s}`"))?;
    value
        .parse()
        .map(|n0| Split { n0 })
        .map_err(|_| format!("`{value}` is not a count"))
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Sparse estimate (`row,col,value`); not needed with `--split`.
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// True coefficients as a dense CSV.
    #[arg(long)]
    pub b_true: Option<PathBuf>,
    /// Group definitions (TOML).
    #[arg(long)]
    pub groups: PathBuf,
    /// Predictors for prediction error; needs `--y`.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Responses for prediction error; needs `--x`.
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// `n0=K`: fit on K random rows and score the rest.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Seed of the split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the metrics row here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Grid config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Replicates per grid cell.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides the base seed in the grid.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::new(2, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse { .. } | Error::InvalidConfig(_) => 2,
            Error::Io { .. } => 3,
            Error::DimensionMismatch { .. } | Error::IndexOutOfRange { .. } => 4,
            _ => 5,
        };
        CliError::new(code, e.to_string())
    }
}

pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        let code = if e.use_stderr() { 2 } else { 0 };
        CliError::new(code, e.to_string())
    })?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => bench::bench(&a),
    }
}
