//! `tearnet`: dataset synthesis, training, evaluation and codeword analyses.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::CliError;

/// Environment variable that fixes the number of worker threads.
pub const WORKERS_ENV: &str = "TEARNET_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "tearnet", version, about = "Folding and tearing point-cloud autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Settings may also come from `--config`
/// (TOML, or JSON by extension); flags win over the file.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Common {
    /// TOML or JSON file with this command's settings.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Master seed (required, from the flag or the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Named preset (dataset preset for `synth`, model preset otherwise).
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset (PLY clouds plus a JSON manifest).
    Synth(commands::SynthOpts),
    /// Pretrain a fold-only model or finetune a tearing variant.
    Train(commands::TrainOpts),
    /// Reconstruction metrics (CD, EMD) of checkpoints on a split.
    Eval(commands::EvalOpts),
    /// Dump u0, u1, x1, x2, x3, the graph and the mesh for chosen scenes.
    Reconstruct(commands::ReconstructOpts),
    /// Draw fresh points from the surface a codeword decodes to.
    Resample(commands::ResampleOpts),
    /// Encode a split into a codeword table.
    Codes(commands::CodesOpts),
    /// Cross-validated object counting on a codeword table.
    Count(commands::CountOpts),
    /// Distances to the mean codeword of the largest count.
    Dk(commands::DkOpts),
    /// Finite-difference check of every variant's gradients.
    Gradcheck(commands::GradcheckOpts),
}

fn set_workers() -> Result<(), CliError> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    set_workers()?;
    match cli.command {
        Command::Synth(o) => commands::synth(o),
        Command::Train(o) => commands::train(o),
        Command::Eval(o) => commands::eval(o),
        Command::Reconstruct(o) => commands::reconstruct(o),
        Command::Resample(o) => commands::resample(o),
        Command::Codes(o) => commands::codes(o),
        Command::Count(o) => commands::count(o),
        Command::Dk(o) => commands::dk(o),
        Command::Gradcheck(o) => commands::gradcheck(o),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on unknown flags
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tearnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
