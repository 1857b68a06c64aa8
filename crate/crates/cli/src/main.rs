use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wacnn::Error;

mod commands;
mod config;
mod pgm;

use commands::EvalSplit;

#[derive(Parser)]
#[command(name = "wacnn", version, about = "Wavelet-attention CNN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split an 8-bit PGM into its four half-resolution subbands.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "haar")]
        wavelet: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network; writes metrics.csv and checkpoint.wck into out_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Top-1 accuracy of a checkpoint on a split of the configured dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalSplit::Val)]
        split: EvalSplit,
    },
    /// Run the invariant suite.
    Selfcheck {
        #[arg(long, hide = true)]
        perturb_haar: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Decompose { input, wavelet, out } => commands::decompose(&input, &wavelet, &out),
        Command::Train { config } => commands::train(&config),
        Command::Eval { checkpoint, config, split } => commands::eval(&checkpoint, &config, split),
        Command::Selfcheck { perturb_haar } => commands::selfcheck(perturb_haar),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Numeric(_)) { 3 } else { 2 })
        }
    }
}
