//! Command-line front end for the MR-to-CT spine translation pipeline.

mod commands;
mod config;
mod error;

use clap::{Args, Parser, Subcommand};
use error::CliResult;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "spinesynth",
    about = "MR-to-CT spine translation pipeline: phantoms, registration, diffusion translation, segmentation, evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, global = false)]
    config: PathBuf,
    /// Override a config key, e.g. --set translate.steps=50. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-slice/per-patch parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic paired MR/CT phantom with ground-truth labels.
    Phantom(Common),
    /// Landmark extraction + rigid registration of a CT onto the MR space.
    Register(Common),
    /// Threshold-segment a (normalized) CT into vertebra labels + subregions.
    Segment(Common),
    /// Translate an MR volume to a synthetic CT with the diffusion sampler.
    Translate(Common),
    /// Image-quality metrics, Dice scores and paired t-tests.
    Evaluate(Common),
    /// Sweep sampler parameters (steps, eta, w): translate + evaluate per cell.
    Ablate(Common),
}

fn run(cmd: &Command) -> CliResult<()> {
    let common = match cmd {
        Command::Phantom(c)
        | Command::Register(c)
        | Command::Segment(c)
        | Command::Translate(c)
        | Command::Evaluate(c)
        | Command::Ablate(c) => c,
    };
    let cfg = config::load_config(&common.config, &common.set, common.seed, common.jobs)?;
    match cmd {
        Command::Phantom(_) => commands::phantom::run(&cfg),
        Command::Register(_) => commands::register::run(&cfg),
        Command::Segment(_) => commands::segment::run(&cfg),
        Command::Translate(_) => commands::translate::run(&cfg),
        Command::Evaluate(_) => commands::evaluate::run(&cfg),
        Command::Ablate(_) => commands::ablate::run(&cfg),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
