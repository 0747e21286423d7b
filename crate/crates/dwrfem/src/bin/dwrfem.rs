use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dwrfem::config::{execute, RunConfig};

#[derive(Parser)]
#[command(
    name = "dwrfem",
    about = "Goal-driven adaptive finite element runs for convection-dominated transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run configuration and write history, summary and
    /// snapshots into its output directory.
    Run {
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides the configured iteration budget.
        #[arg(long)]
        max_iters: Option<usize>,
        /// Suppresses per-iteration progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Report every invariant the configuration violates, without
    /// running. No output means the configuration is runnable.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            output_dir,
            max_iters,
            quiet,
        } => {
            let mut cfg = match RunConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(1);
                }
            };
            if let Some(dir) = output_dir {
                cfg.output.dir = dir;
            }
            if let Some(n) = max_iters {
                cfg.adapt.max_iters = n;
            }
            match execute(&cfg, quiet) {
                Ok(outcome) if outcome.failure.is_none() => ExitCode::SUCCESS,
                Ok(outcome) => {
                    eprintln!(
                        "solver failure: {}",
                        outcome.failure.as_deref().unwrap_or("unknown")
                    );
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Validate { config } => {
            let cfg = match RunConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => {
                    println!("{e}");
                    return ExitCode::from(1);
                }
            };
            let report = cfg.violations();
            for line in &report {
                println!("{line}");
            }
            if report.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
