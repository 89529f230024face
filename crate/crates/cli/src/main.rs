//! `silentwave`: condition checks, solves, asymptotic-data inversion, the Kasner pipeline and
//! the acceptance suite, driven by a TOML configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod data;
mod error;
mod output;

use commands::Ctx;
use config::Loaded;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "silentwave", version, about = "Silent linear wave equations on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed` in the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    /// Project constraint-violating Kasner data onto the constraints instead of refusing it.
    #[arg(long, global = true)]
    project_constraints: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the silence, balance and convergence conditions of the configured system.
    Check,
    /// Solve, extract asymptotic data and fit residual decay rates.
    Solve,
    /// Construct initial data with prescribed asymptotic data.
    Specify,
    /// Maxwell fields on a Kasner background: energy along geodesics.
    Kasner,
    /// Run the acceptance criteria.
    Accept,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let loaded = cli.config.as_deref().map(Loaded::read).transpose()?;
    let ctx = Ctx { loaded, out: cli.out, seed: cli.seed, project_constraints: cli.project_constraints };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        pool = pool.num_threads(n as usize);
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Check => commands::check(&ctx),
        Command::Solve => commands::solve_cmd(&ctx),
        Command::Specify => commands::specify(&ctx),
        Command::Kasner => commands::kasner(&ctx),
        Command::Accept => commands::accept(&ctx),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
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
