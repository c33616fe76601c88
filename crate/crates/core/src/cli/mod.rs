//! The `kunet` command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 3 for
//! runtime and numerical failures.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_analyze, cmd_generate, cmd_run, load_dataset, run_one, summarize, write_summary,
    AnalyzeReport, RunOutcome, SummaryRow,
};
pub use config::{
    ConfigLayer, ExperimentConfig, RunSpec, ADAM_LR_GRID, DEFAULT_OPTIMIZERS, SGD_LR_GRID,
};

use crate::data::{SeriesKind, DEFAULT_SERIES_LEN};
use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "kunet",
    version,
    about = "Kernel U-Net forecasting with level-weighted SGD (EW-SGDM)"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic benchmark series as a `t,value` CSV
    Generate(GenerateArgs),
    /// Train every (optimizer, lr, ew base, seed) combination and write a summary
    Run(ExperimentArgs),
    /// Print redundancy, invocation counts and weights, and check the gradient identities
    Analyze(ExperimentArgs),
}

#[derive(Debug, clap::Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value = "ds1")]
    pub dataset: SeriesKind,
    /// Number of time steps
    #[arg(long, default_value_t = DEFAULT_SERIES_LEN)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Std of Gaussian noise added to every value
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Destination CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ExperimentArgs {
    /// TOML file with the same keys as the long flags; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub layer: ConfigLayer,
}

impl ExperimentArgs {
    pub fn resolve(self) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(path) => ConfigLayer::from_toml_file(path)?,
            None => ConfigLayer::default(),
        };
        self.layer.over(file).resolve()
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_)
        | Error::SeriesTooShort { .. }
        | Error::PartitionTooShort { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Generate(a) => {
            let data = cmd_generate(a.dataset, a.n, a.seed, a.noise, &a.out)?;
            println!("wrote {} rows to {}", data.len(), a.out.display());
            Ok(EXIT_OK)
        }
        Command::Run(a) => {
            let cfg = a.resolve()?;
            let (outcomes, summary) = cmd_run(&cfg)?;
            println!("{} runs written to {}", outcomes.len(), cfg.out.display());
            println!(
                "{:<8} {:>8} {:>7} {:>6} {:>10} {:>14} {:>14}",
                "optim", "lr", "ew_base", "seed", "best_epoch", "best_val_mse", "test_mse"
            );
            let show = |v: Option<String>| v.unwrap_or_else(|| "-".into());
            for r in &summary {
                println!(
                    "{:<8} {:>8} {:>7} {:>6} {:>10} {:>14} {:>14}",
                    r.optimizer.label(),
                    r.lr,
                    show(r.ew_base.map(|b| b.to_string())),
                    r.seed,
                    show(r.best_epoch.map(|e| e.to_string())),
                    show(r.best_val_mse.map(|v| format!("{v:.6e}"))),
                    show(r.test_mse.map(|v| format!("{v:.6e}"))),
                );
            }
            Ok(EXIT_OK)
        }
        Command::Analyze(a) => {
            let report = cmd_analyze(&a.resolve()?)?;
            println!("{report}");
            Ok(if report.identity.all_pass() {
                EXIT_OK
            } else {
                EXIT_RUNTIME
            })
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main_entry() -> i32 {
    run_cli(std::env::args_os())
}
