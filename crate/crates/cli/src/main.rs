//! `trapsim`: batch front-end for the electric box trap simulator.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "trapsim", version, about = "Monte Carlo simulator for a microstructured electric box trap")]
struct Cli {
    /// Run configuration (TOML sections, see configs/SCHEMA.md).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `[run] output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; overrides `[run] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "TRAPSIM_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the field on a grid and write field_map.csv.
    Fields,
    /// Locate field zeros and write zeros.csv.
    Zeros,
    /// Storage experiment over the t_hold sweep.
    Storage,
    /// Adiabatic cooling experiment over the t_ramp sweep.
    Adiabatic,
    /// Mean velocity and temperature from a TOF file.
    AnalyzeTof {
        file: PathBuf,
        /// Guide length in m; defaults to the value in the file.
        #[arg(long)]
        length: Option<f64>,
        /// Molecule mass in kg; defaults to the configured species.
        #[arg(long)]
        mass: Option<f64>,
    },
    /// Exponential lifetime fit of `t,signal` rows.
    FitLifetime {
        file: PathBuf,
        #[arg(long)]
        poisson: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let loaded = config::load(cli.config.as_deref())?;
    let seed = cli.seed.or(loaded.config.run.seed).unwrap_or(0);
    let out = cli
        .out
        .or_else(|| loaded.config.run.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    let ctx = Context { config: loaded, seed, out };
    pool.install(|| match &cli.command {
        Command::Fields => commands::fields(&ctx),
        Command::Zeros => commands::zeros(&ctx),
        Command::Storage => commands::storage(&ctx),
        Command::Adiabatic => commands::adiabatic(&ctx),
        Command::AnalyzeTof { file, length, mass } => commands::analyze_tof(&ctx, file, *length, *mass),
        Command::FitLifetime { file, poisson } => commands::fit_lifetime(&ctx, file, *poisson),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("trapsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
