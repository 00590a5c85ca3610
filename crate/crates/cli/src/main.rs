//! `tad`: command-line driver for the temporal action detection pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 invalid or
//! mismatched input.

mod commands;
mod config;
mod failure;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::{split_overrides, PipelineConfig};
use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "tad",
    version,
    about = "Temporal action detection pipeline",
    after_help = "Any configuration key can be overridden with --section.key VALUE, e.g. --propgen.t 128."
)]
struct Cli {
    /// TOML configuration file; built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores); overrides `parallelism`.
    #[arg(long, global = true)]
    parallelism: Option<usize>,

    /// Build proposals from ground-truth maps instead of the learned head.
    #[arg(long, global = true)]
    oracle: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate a seeded synthetic dataset (features, annotations, class scores).
    Synth,
    /// Write temporally shifted copies of the features.
    Augment,
    /// Decode proposals from confidence maps.
    Propose,
    /// Rescore proposals with the relation module.
    Relate,
    /// Fit relation weights to the tIoU of each proposal.
    TrainRelation,
    /// Soft-NMS plus video-level classes, written as a submission file.
    Detect,
    /// Merge several runs (detections or head outputs).
    Ensemble,
    /// AR@AN and AUC of a proposal file.
    EvalProposals,
    /// Average mAP of a submission file.
    EvalDetections,
    /// Print the default configuration.
    ConfigExample,
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<(), Failure> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(p) = cli.parallelism {
        cfg.parallelism = p;
    }
    if let Command::ConfigExample = cli.command {
        print!("{}", PipelineConfig::example());
        return Ok(());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.parallelism).build()?;
    let ctx = Context {
        cfg,
        oracle: cli.oracle,
    };
    pool.install(|| match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Augment => commands::augment(&ctx),
        Command::Propose => commands::propose(&ctx),
        Command::Relate => commands::relate(&ctx),
        Command::TrainRelation => commands::train_relation_cmd(&ctx),
        Command::Detect => commands::detect(&ctx),
        Command::Ensemble => commands::ensemble_cmd(&ctx),
        Command::EvalProposals => commands::eval_proposals(&ctx),
        Command::EvalDetections => commands::eval_detections(&ctx),
        Command::ConfigExample => unreachable!("handled above"),
    })
}

fn main() -> ExitCode {
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(split) => split,
        Err(e) => {
            eprintln!("tad: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tad: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
