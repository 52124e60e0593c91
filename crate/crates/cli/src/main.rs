use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod settings;

use settings::{LocalizationFlags, MappingFlags, OracleFlags, SynthFlags, UsageError};

/// Topological mapping and Bayesian place localization over descriptor streams.
#[derive(Parser, Debug)]
#[command(name = "colonmapper", version)]
struct Cli {
    /// Settings file of `key = value` lines; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic world and sessions through it.
    Simulate(SimulateArgs),
    /// Build a map from a descriptor stream.
    Map(MapArgs),
    /// Localize a descriptor stream against a map.
    Localize(LocalizeArgs),
    /// Score decisions against ground truth.
    Eval(EvalArgs),
}

#[derive(clap::Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    places: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    regions: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    sessions: Option<u64>,
    /// World seed; also seeds the sessions and the match caches.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Also write a match cache per session covering the mapper's pair window.
    #[arg(long)]
    match_cache: bool,
    /// Largest skip run the cached pair window must cover.
    #[arg(long)]
    max_skips: Option<u32>,
    #[command(flatten)]
    synth: SynthFlags,
}

#[derive(clap::Args, Debug)]
pub struct MapArgs {
    #[arg(long, value_name = "PATH")]
    descriptors: PathBuf,
    #[command(flatten)]
    oracle: OracleFlags,
    /// Map file to write.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Event log (JSON lines); defaults to `<out>.events.jsonl`.
    #[arg(long, value_name = "PATH")]
    events: Option<PathBuf>,
    #[command(flatten)]
    mapping: MappingFlags,
}

#[derive(clap::Args, Debug)]
pub struct LocalizeArgs {
    #[arg(long, value_name = "PATH")]
    map: PathBuf,
    #[arg(long, value_name = "PATH")]
    descriptors: PathBuf,
    #[command(flatten)]
    oracle: OracleFlags,
    /// Decisions file to write.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Store the posterior after every query node.
    #[arg(long)]
    trace: bool,
    /// Gate for cutting query nodes; defaults to the map's settings.
    #[command(flatten)]
    mapping: MappingFlags,
    #[command(flatten)]
    localization: LocalizationFlags,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    decisions: PathBuf,
    #[arg(long, value_name = "PATH")]
    map: PathBuf,
    /// Ground truth of the localized session.
    #[arg(long, value_name = "PATH")]
    truth: PathBuf,
    /// Ground truth of the mapping session.
    #[arg(long, value_name = "PATH")]
    map_truth: PathBuf,
    /// Report file to write.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, value_name = "PATH")]
    timeline: Option<PathBuf>,
    /// Posterior heat map; needs a decisions file written with `--trace`.
    #[arg(long, value_name = "PATH")]
    posterior: Option<PathBuf>,
    /// Also run raw retrieval; needs `--descriptors` and a match source.
    #[arg(long)]
    baseline: bool,
    /// Localized descriptor stream, for the baseline.
    #[arg(long, value_name = "PATH")]
    descriptors: Option<PathBuf>,
    #[command(flatten)]
    oracle: OracleFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result =
        settings::ConfigFile::load(cli.config.as_deref()).and_then(|file| match cli.command {
            Command::Simulate(args) => commands::simulate(&args, &file),
            Command::Map(args) => commands::map(&args, &file),
            Command::Localize(args) => commands::localize(&args, &file),
            Command::Eval(args) => commands::eval(&args, &file),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
