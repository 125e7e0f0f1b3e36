mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use vrident::Error;

use config::{RunConfig, CONFIG_HELP};

#[derive(Parser)]
#[command(name = "vrident", version, about = "User identification benchmark on VR motion data", after_long_help = CONFIG_HELP)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted
    #[arg(long, global = true, env = "VRIDENT_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for training and evaluation
    #[arg(long, global = true, env = "VRIDENT_JOBS")]
    jobs: Option<usize>,
    /// Base seed; cell i uses seed + i
    #[arg(long, global = true, env = "VRIDENT_SEED")]
    seed: Option<u64>,
    /// Floating point width, 32 or 64
    #[arg(long, global = true, env = "VRIDENT_PRECISION")]
    precision: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into data.dir
    Synth,
    /// Convert recordings listed in ingest.index into data.dir
    Ingest,
    /// Train every model x encoding cell of the grid
    Train,
    /// Evaluate trained checkpoints, write metrics.csv and the report
    Benchmark,
    /// Regenerate figures and table from a metrics CSV
    Report {
        /// Defaults to out_dir/metrics.csv
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Dataset(_)
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Checkpoint(_)
        | Error::InvalidPose(_)
        | Error::SessionTooShort { .. } => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> vrident::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.precision {
        cfg.precision = p;
    }
    cfg.validate()?;
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Ingest => commands::ingest(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Benchmark => commands::benchmark(&cfg),
        Command::Report { metrics } => {
            let m = metrics.unwrap_or_else(|| cfg.metrics_path());
            commands::report(&cfg, &m)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
