//! `finescale` — one binary for the whole pipeline: synthesize paired
//! datasets, ingest pre-aligned real pairs, train downscaling GANs, draw
//! stochastic realisations, evaluate calibration, and render plots.

mod commands;
mod manifest;
mod plotting;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "finescale",
    version,
    about = "Stochastic GAN downscaling with deep noise injection",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic paired datasets or fixed-warp truth ensembles
    Synth(commands::synth::SynthArgs),
    /// Split, standardize, and containerize pre-aligned LR/HR pairs
    Ingest(commands::ingest::IngestArgs),
    /// Train a downscaling GAN from a config file
    Train(commands::train::TrainArgs),
    /// Draw stochastic HR realisations from a checkpoint
    Generate(commands::generate::GenerateArgs),
    /// Run calibration and distribution metrics against a checkpoint
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Render SVG/PNG figures from evaluate outputs
    Plot(commands::plot::PlotArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Ingest(args) => commands::ingest::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Generate(args) => commands::generate::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Plot(args) => commands::plot::run(args),
    }
}

/// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical abort.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<finescale::Error>() {
        Some(finescale::Error::InvalidArgument(_))
        | Some(finescale::Error::ConfigMismatch(_))
        | Some(finescale::Error::Json(_))
        | Some(finescale::Error::ShapeMismatch(_)) => 2,
        Some(finescale::Error::Io(_))
        | Some(finescale::Error::Corrupt(_))
        | Some(finescale::Error::Csv(_))
        | Some(finescale::Error::MissingData(_)) => 3,
        Some(finescale::Error::NonFinite(_)) | Some(finescale::Error::Tensor(_)) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
