//! `proposal-scorer` command-line front end.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use proposal_scorer::scene::Mode;
use thiserror::Error;

pub use manifest::{expand_inputs, RunManifest};

/// Failures mapped to process exit codes: 2 for bad input, 1 for internal errors.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => 2,
            Self::Internal(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "proposal-scorer", version, about = "Closed-loop scoring of trajectory proposals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score proposals against scenes; writes scores.csv and summary.json.
    Score(ScoreArgs),
    /// Export mapping and prediction targets per scene.
    Labels(LabelsArgs),
    /// Pearson correlation matrix of numeric CSV columns.
    Correlate(CorrelateArgs),
    /// Time the attention kernels; writes bench.csv.
    Bench(BenchArgs),
    /// Write synthetic scenes from consecutive seeds.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Scene files or directories of `*.json` scenes (sorted by name).
    #[arg(long, required = true, num_args = 1..)]
    pub scenes: Vec<PathBuf>,
    /// Proposal files or directories, paired with scenes in order. Without
    /// this flag each scene's expert trajectory is its only proposal.
    #[arg(long, num_args = 1..)]
    pub proposals: Vec<PathBuf>,
    /// TOML or JSON overlay onto the mode's default scoring config.
    #[arg(long, env = "PROPOSAL_SCORER_CONFIG")]
    pub config: Option<PathBuf>,
    /// Require every scene to be in this mode.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Worker threads; output does not depend on it.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: Option<u32>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct LabelsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Check that perfect predictions give near-zero map and prediction losses.
    #[arg(long)]
    pub with_loss_check: bool,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Metric CSV files; rows are concatenated and headers must match.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Comma-separated columns. Defaults to every fully numeric column.
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 20)]
    pub reps: i64,
    /// Proposal counts for the iteration sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64, 128, 256])]
    pub n_sweep: Vec<usize>,
    /// Grid side lengths for the dense baseline.
    #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128])]
    pub grid_sweep: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    #[arg(long, default_value_t = Mode::Navsim)]
    pub mode: Mode,
    /// JSON generator config; its `mode` is overridden by `--mode`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Score(a) => commands::score(&a),
        Command::Labels(a) => commands::labels(&a),
        Command::Correlate(a) => commands::correlate(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Gen(a) => commands::gen(&a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors go to stderr as `error: ...` lines.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            for line in e.to_string().lines() {
                eprintln!("error: {line}");
            }
            e.exit_code()
        }
    }
}
