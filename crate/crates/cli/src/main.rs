//! `seldkit` — scene synthesis, filter fitting, detection, and evaluation
//! from one binary.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 numerical failure
//! (training divergence).

mod commands;
mod config;
mod manifest;
mod svg;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

use seldkit_core::Error;

#[derive(Parser)]
#[command(name = "seldkit", version, about = "Raw-waveform sound event detection and localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a scene from a TOML spec: WAV, label CSV, and manifest.
    Synth(commands::synth::SynthArgs),
    /// Fit a filter to a synthesized scene; writes checkpoint and trace.
    FitFilters(commands::fit::FitArgs),
    /// Run gating, score fusion, NMS, and the simultaneous-event clip.
    Detect(commands::detect::DetectArgs),
    /// Evaluate detections against ground truth (event or segment metrics).
    Eval(commands::eval::EvalArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::FitFilters(args) => commands::fit::run(args),
        Command::Detect(args) => commands::detect::run(args),
        Command::Eval(args) => commands::eval::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::TrainingDiverged { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
