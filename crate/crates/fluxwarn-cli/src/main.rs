//! `fluxwarn`: command-line surface wiring the forecasting, alarm, and
//! correlation pipelines into reproducible stages. Every command is
//! deterministic given its flags and seed, writes its outputs atomically,
//! and leaves a `.manifest.json` recording full provenance. On failure the
//! files written so far are removed and the exit code is nonzero.

mod commands;
mod ioutil;
mod manifest;

use clap::{Parser, Subcommand};

use crate::commands::{alarm, correlate, evaluate, generate, thresholds, train};
use crate::ioutil::OutputSet;

#[derive(Parser)]
#[command(
    name = "fluxwarn",
    version,
    about = "Traffic flux forecasting and alarm toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic city traffic (and optionally pollution) data
    Generate(generate::GenerateArgs),
    /// Train per-segment forecast models
    Train(train::TrainArgs),
    /// Predict and classify alarm levels over an evaluation window
    Alarm(alarm::AlarmArgs),
    /// Build a confusion matrix from a level table
    Evaluate(evaluate::EvaluateArgs),
    /// Traffic-pollution lag scan and daily correlation
    Correlate(correlate::CorrelateArgs),
    /// Compute per-segment alarm thresholds
    Thresholds(thresholds::ThresholdsArgs),
}

fn main() {
    let cli = Cli::parse();
    let mut outputs = OutputSet::default();
    let result = match &cli.command {
        Command::Generate(args) => generate::run(args, &mut outputs),
        Command::Train(args) => train::run(args, &mut outputs),
        Command::Alarm(args) => alarm::run(args, &mut outputs),
        Command::Evaluate(args) => evaluate::run(args, &mut outputs),
        Command::Correlate(args) => correlate::run(args, &mut outputs),
        Command::Thresholds(args) => thresholds::run(args, &mut outputs),
    };
    if let Err(err) = result {
        outputs.discard();
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
