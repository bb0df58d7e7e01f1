//! Command-line driver: configuration, experiment orchestration, record
//! persistence and the verification runner.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 verification
//! failure, 3 runtime failure. Errors are printed to stderr as one JSON
//! object.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use pwcf::attacks::SolverChoice;
use thiserror::Error;

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub mod commands;
pub mod config;
pub mod manifest;
pub mod records;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Verification(_) => "verification",
            CliError::Runtime(_) => "runtime",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Pwcf,
    Pgd,
    Both,
}

impl From<SolverArg> for SolverChoice {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Pwcf => SolverChoice::Pwcf,
            SolverArg::Pgd => SolverChoice::Pgd,
            SolverArg::Both => SolverChoice::Both,
        }
    }
}

/// Penalty BFGS-SQP adversarial robustness experiments at desk scale.
#[derive(Debug, Parser)]
#[command(name = "pwcf", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration. Built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory. Falls back to `out_dir` in the config, then `pwcf-out`.
    #[arg(long, global = true, env = "PWCF_OUT_DIR")]
    pub out: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for all cores; overrides `jobs` in the config.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Attack solver; overrides `solver` in the config.
    #[arg(long, global = true, value_enum)]
    pub solver: Option<SolverArg>,
    /// Fill the wall_time_ms column. Off by default so reruns are
    /// byte-identical.
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Train the desk classifier (adversarially if `[adv_train]` is set) and
    /// write model.json and accuracy.json.
    Train,
    /// Run the max-loss attacks in `[[attack]]`; one CSV per solver, loss and metric.
    Attack,
    /// Measure min-radius for every `[[radius]]` entry; one CSV per metric.
    Radius,
    /// Summarize attack and radius records into summary.json and
    /// sparsity_histograms.csv.
    Analyze {
        /// Directory holding *_records.jsonl; defaults to the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run the invariant suites; exit 2 if any fails.
    Verify,
    /// Print the outer directions given by a stationary and a global inner
    /// solution of the Danskin example.
    DanskinDemo,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match commands::execute(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", err.to_json());
            err.exit_code()
        }
    }
}
