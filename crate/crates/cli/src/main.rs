//! Pipeline driver: simulate | preprocess | match | fit | disparity |
//! report, mirroring the analysis order end to end.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! failure.

mod commands;
mod config;
mod outputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;

#[derive(Parser)]
#[command(name = "quirt", version, about = "Latent-construct quality and disparity pipeline")]
struct Cli {
    /// Configuration file (TOML); omitted = built-in desk-scale defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Thread count override (0 = default pool).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort (responses, covariates, groups, scoring
    /// rules, truth record).
    Simulate,
    /// Apply rare-category collapsing and write the processed cohort.
    Preprocess,
    /// Draw a template and cardinality-match each group to it.
    #[command(name = "match")]
    Match,
    /// Fit the configured model family and write fit tables and
    /// diagnostics.
    Fit,
    /// Estimate disparities: observed-score regression and the structural
    /// class model, plus figure data.
    Disparity,
    /// Aggregate all outputs into a single report document.
    Report,
}

/// Error carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "configuration error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<quirt::Error> for CliError {
    fn from(e: quirt::Error) -> Self {
        use quirt::Error as E;
        match e {
            E::Data(_) | E::Parse(_) | E::Io(_) | E::Infeasible(_) => Self::Data(e.to_string()),
            E::Numerical(_) | E::NotPositiveDefinite => Self::Numerical(e.to_string()),
            E::DimensionMismatch(_)
            | E::InvalidParameter(_)
            | E::UndefinedCrossing(_, _)
            | E::Identifiability(_)
            | E::Unsupported(_) => Self::Usage(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = Config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    init_threads(config.threads);
    match cli.command {
        Command::Simulate => commands::simulate::run(&config),
        Command::Preprocess => commands::preprocess::run(&config),
        Command::Match => commands::matching::run(&config),
        Command::Fit => commands::fit::run(&config),
        Command::Disparity => commands::disparity::run(&config),
        Command::Report => commands::report::run(&config),
    }
}

#[cfg(feature = "parallel")]
fn init_threads(threads: usize) {
    if threads > 0 {
        // Ignore failure when a pool already exists (repeat invocations in
        // tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn init_threads(_threads: usize) {}
