mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mbt", version, about = "Train, evaluate and verify MBT super-resolution models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a run config, optionally resuming a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Super-resolve a single image.
    Infer(InferArgs),
    /// Compare analytic and finite-difference gradients block by block.
    Gradcheck(GradcheckArgs),
    /// Print a model configuration and its parameter counts.
    Info(InfoArgs),
    /// Write a synthetic paired dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory (overrides out_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config override, repeatable: --set epochs=5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Measure on the luma channel instead of RGB.
    #[arg(long)]
    pub y_channel: bool,
    /// Border pixels removed from each side.
    #[arg(long, default_value_t = 0)]
    pub shave: usize,
    /// Per-image CSV destination.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Use the live weights even when the checkpoint carries an EMA shadow.
    #[arg(long)]
    pub live: bool,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub live: bool,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// ppsa, cab, spal, cptb, prm or full; all blocks when omitted.
    #[arg(long)]
    pub block: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Elements probed per tensor (0 probes all).
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    /// Print every parameter group.
    #[arg(long)]
    pub verbose: bool,
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
pub struct InfoSource {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct InfoArgs {
    #[command(flatten)]
    pub source: InfoSource,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::init_threads().and_then(|_| match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Info(a) => commands::info(a),
        Command::Synth(a) => commands::synth(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mbt: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
