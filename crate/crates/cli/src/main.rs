//! `esotune` command-line entry point.

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;
use output::Outputs;

#[derive(Parser)]
#[command(name = "esotune", version, about = "ESO tuning toolkit: simulation, datasets, estimator training and gain selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config of the command.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    jobs: Option<usize>,
    /// Directory for outputs and the run manifest.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// One closed-loop run: trajectory CSV and criteria JSON.
    Simulate(Common),
    /// Criteria of bandwidth-parametrized observers over a range of bandwidths.
    Sweep(Common),
    /// Labeled train/val/test records for one plant kind.
    GenDataset(Common),
    /// Trains the performance estimator on a generated dataset.
    Train(Common),
    /// Selects observer eigenvalues with the nn, ideal, bandwidth or random selector.
    Tune(Common),
    /// Cost landscape over the lambda3 = lambda2 slice.
    Landscape(Common),
    /// Empirical checks of the observer and closed-loop bounds.
    CheckBounds(Common),
    /// Paired network-vs-random comparison on random plants.
    Montecarlo(Common),
}

type Runner = fn(&Path, Option<u64>, &mut Outputs) -> Result<commands::RunInfo, CliError>;

fn run(name: &str, common: &Common, runner: Runner) -> Result<(), CliError> {
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let mut out = Outputs::new(&common.out_dir)?;
    match runner(&common.config, common.seed, &mut out) {
        Ok((config, seeds)) => {
            let manifest = out.finish(name, &config, seeds)?;
            eprintln!("wrote {}", manifest.display());
            Ok(())
        }
        Err(e) => {
            out.abandon(name, &e);
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common, runner): (&str, &Common, Runner) = match &cli.command {
        Command::Simulate(c) => ("simulate", c, commands::simulate),
        Command::Sweep(c) => ("sweep", c, commands::sweep),
        Command::GenDataset(c) => ("gen-dataset", c, commands::gen_dataset),
        Command::Train(c) => ("train", c, commands::train_cmd),
        Command::Tune(c) => ("tune", c, commands::tune),
        Command::Landscape(c) => ("landscape", c, commands::landscape),
        Command::CheckBounds(c) => ("check-bounds", c, commands::check_bounds),
        Command::Montecarlo(c) => ("montecarlo", c, commands::montecarlo),
    };
    match run(name, common, runner) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("esotune {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
