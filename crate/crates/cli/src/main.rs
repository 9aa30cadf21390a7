//! `notasign`: prepare data, train, generate, evaluate, ablate and inspect
//! KAN layers.

mod commands;
mod config;
mod dataset;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;

/// Bad flags, config files or argument combinations (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "notasign", version, about = "HamNoSys-to-pose generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus (pose files plus manifest).
    Synthesize {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Filter frames, record normalization and bucket samples by complexity.
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = notasign::data::DEFAULT_MIN_CONFIDENCE)]
        min_confidence: f64,
    },
    /// Train a model; writes checkpoint, log and effective config.
    Train(Overrides),
    /// Generate pose files from notation.
    Generate(commands::generate::GenerateArgs),
    /// Metrics on one split of a manifest.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Input importances and response curves of KAN feed-forward layers.
    InspectKan {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// The FFN/supervision grid followed by the KAN depth sweep.
    Ablate {
        #[command(flatten)]
        overrides: Overrides,
        /// Depths for the sweep.
        #[arg(long, value_delimiter = ',', default_values_t = notasign::training::ablation::DEFAULT_DEPTHS)]
        depths: Vec<usize>,
        #[arg(long)]
        skip_depth: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synthesize { out, count, seed } => commands::synthesize(&out, count, seed),
        Command::Prepare {
            manifest,
            out,
            min_confidence,
        } => commands::prepare::run(&manifest, &out, min_confidence),
        Command::Train(o) => commands::train::run(&o),
        Command::Generate(a) => commands::generate::run(&a),
        Command::Evaluate(a) => commands::evaluate::run(&a),
        Command::InspectKan { checkpoint, out, top } => commands::inspect::run(&checkpoint, &out, top),
        Command::Ablate {
            overrides,
            depths,
            skip_depth,
        } => commands::train::ablate(&overrides, &depths, skip_depth),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<notasign::Error>() {
            return match e {
                e if e.is_numeric() => 3,
                notasign::Error::InvalidArgument(_) => 1,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
