//! Command-line frontend for simulating and fitting Thomas-type
//! cluster point processes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nscluster::config::RunConfig;
use nscluster::pipeline;
use nscluster::Result;

#[derive(Parser)]
#[command(
    name = "nscluster",
    version,
    about = "Simulation and Bayesian inference for Thomas cluster point processes"
)]
struct Cli {
    /// Run configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Base random seed; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of independent chains for the fit commands.
    #[arg(long, global = true, default_value_t = 1)]
    chains: usize,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an inhomogeneous Thomas pattern from the config's
    /// `simulation` block.
    Simulate,
    /// Simulate a homogeneous generalized Thomas pattern from the
    /// config's `gtp_model` block.
    SimulateGtp,
    /// Two-step fit of the inhomogeneous Thomas process.
    Fit,
    /// Fit the homogeneous generalized Thomas process.
    FitGtp,
    /// Regenerate plots and summaries from traces in the output dir.
    Report,
    /// Check the config and every input it references.
    Validate,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| {
        nscluster::Error::Config("this command requires --config".into())
    })?;
    RunConfig::read(path)
}

fn run(cli: &Cli) -> Result<()> {
    let seed_of = |cfg: &RunConfig| cli.seed.or(cfg.seed).unwrap_or(0);
    match cli.command {
        Command::Validate => {
            let cfg = load_config(cli)?;
            pipeline::cmd_validate(&cfg, cli.quiet)
        }
        Command::Simulate => {
            let cfg = load_config(cli)?;
            pipeline::cmd_simulate(&cfg, &cli.out, seed_of(&cfg), cli.quiet)
        }
        Command::SimulateGtp => {
            let cfg = load_config(cli)?;
            pipeline::cmd_simulate_gtp(&cfg, &cli.out, seed_of(&cfg), cli.quiet)
        }
        Command::Fit => {
            let cfg = load_config(cli)?;
            pipeline::cmd_fit(&cfg, &cli.out, seed_of(&cfg), cli.chains, cli.quiet)
        }
        Command::FitGtp => {
            let cfg = load_config(cli)?;
            pipeline::cmd_fit_gtp(&cfg, &cli.out, seed_of(&cfg), cli.chains, cli.quiet)
        }
        Command::Report => pipeline::cmd_report(&cli.out, cli.quiet),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
