//! `equimap`: reproducible equivariance, invariance and equivalence
//! experiments with CSV and JSON outputs.

mod commands;
mod common;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::data::{ExtractArgs, ExtractParams, SynthArgs, SynthParams};
use commands::maps::{
    CompensateArgs, CompensateParams, EvalMapArgs, EvalMapParams, LearnMapArgs, LearnMapParams,
};
use commands::nets::{
    InvarianceArgs, InvarianceParams, LearnTranslayerArgs, LearnTranslayerParams, StitchArgs, StitchParams,
    TrainNetArgs, TrainNetParams,
};
use commands::pose::{BenchPoseArgs, BenchPoseParams};
use commands::selftest::{SelftestArgs, SelftestParams};
use commands::{execute, Globals};
use config::{ConfigError, ConfigFile};

#[derive(Parser, Debug)]
#[command(name = "equimap", version, about, propagate_version = true)]
struct Cli {
    /// Master random seed (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Maximum number of worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log to standard error: -v for info, -vv for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Print the resolved configuration and output files without running.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Output directory (default runs/<command>).
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesise a classification, generic or pose dataset.
    Synth(SynthArgs),
    /// Extract HOG or network features from an image directory.
    Extract(ExtractArgs),
    /// Train the small reference network on a classification set.
    TrainNet(TrainNetArgs),
    /// Learn an equivariant map by sparse regression.
    LearnMap(LearnMapArgs),
    /// Evaluate a saved map on held-out images.
    EvalMap(EvalMapArgs),
    /// Learn a transformation layer inside a network for the task loss.
    LearnTranslayer(LearnTranslayerArgs),
    /// Stitch two networks and report the frankenstein error.
    Stitch(StitchArgs),
    /// Score channel invariance and find the largest invariant set.
    Invariance(InvarianceArgs),
    /// Classify transformed images with and without map compensation.
    Compensate(CompensateArgs),
    /// Benchmark direct versus equivariant structured pose regression.
    BenchPose(BenchPoseArgs),
    /// Run the exact-case invariant suite.
    Selftest(SelftestArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let g = Globals { seed: cli.seed, threads: cli.threads, output: cli.output, dry_run: cli.dry_run };
    match &cli.command {
        Command::Synth(a) => execute::<SynthParams, _>(&g, file, a),
        Command::Extract(a) => execute::<ExtractParams, _>(&g, file, a),
        Command::TrainNet(a) => execute::<TrainNetParams, _>(&g, file, a),
        Command::LearnMap(a) => execute::<LearnMapParams, _>(&g, file, a),
        Command::EvalMap(a) => execute::<EvalMapParams, _>(&g, file, a),
        Command::LearnTranslayer(a) => execute::<LearnTranslayerParams, _>(&g, file, a),
        Command::Stitch(a) => execute::<StitchParams, _>(&g, file, a),
        Command::Invariance(a) => execute::<InvarianceParams, _>(&g, file, a),
        Command::Compensate(a) => execute::<CompensateParams, _>(&g, file, a),
        Command::BenchPose(a) => execute::<BenchPoseParams, _>(&g, file, a),
        Command::Selftest(a) => execute::<SelftestParams, _>(&g, file, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
