//! `mcn`: train, run and inspect the low-light raw enhancement pipeline.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 I/O, 4 numeric failure.

mod commands;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use mcn_core::Error;

#[derive(Parser)]
#[command(name = "mcn", version, about = "Low-light raw image enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model as described by a config file.
    Train(TrainArgs),
    /// Amplify and restore one raw frame.
    Enhance(EnhanceArgs),
    /// Score a checkpoint over a dataset manifest.
    Eval(EvalArgs),
    /// Export the illumination map curve as CSV.
    RimefCurve(RimefCurveArgs),
    /// Generate a synthetic paired dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Config file with [model], [train] and [data] sections.
    #[arg(long)]
    config: PathBuf,
    /// Dataset manifest; overrides the config file.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory; overrides the config file.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Resume from a train_state.mcnc file.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr_initial: Option<f64>,
    #[arg(long)]
    lr_late: Option<f64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    /// Disable random crop/flip/rotate augmentation.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args)]
struct EnhanceArgs {
    /// Raw mosaic (MCNT, u16).
    #[arg(long)]
    input: PathBuf,
    /// Sidecar metadata; defaults to the input with a .meta extension.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Model config file (architecture must match the checkpoint).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained checkpoint (MCNC). Not needed with --bypass-network.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output image (MCNT); a .ppm preview lands next to it.
    #[arg(long)]
    out: PathBuf,
    /// Skip the network: render the packed, amplified input directly at
    /// half resolution.
    #[arg(long)]
    bypass_network: bool,
    /// Gain-map lower bound. Defaults to 1/ratio (HDR regime).
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// Force the training regime beta = 1 (uniform linear gain).
    #[arg(long, conflicts_with = "beta")]
    beta_one: bool,
    #[arg(long, allow_negative_numbers = true)]
    r: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Amplification ratio; defaults to the frame's recorded exposure ratio.
    #[arg(long, allow_negative_numbers = true)]
    ratio: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Metrics CSV destination.
    #[arg(long)]
    out: PathBuf,
    /// Which output to score: "back", "plain" or an SGN index.
    #[arg(long, default_value = "back")]
    output: String,
    /// Dump every per-block feature map as MCNT under this directory.
    #[arg(long)]
    dump_features: Option<PathBuf>,
    /// Gain-map lower bound used for input amplification (default 1,
    /// the training regime).
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
}

#[derive(Args)]
struct RimefCurveArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    r: f64,
    #[arg(long, default_value_t = 1e-6, allow_negative_numbers = true)]
    alpha: f64,
    /// Defaults to 1/ratio.
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 300.0, allow_negative_numbers = true)]
    ratio: f64,
    #[arg(long, default_value_t = 1024)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    scenes: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated exposure ratios to draw from.
    #[arg(long, default_value = "100,250,300")]
    ratios: String,
    /// CFA to mosaic with: "bayer" or "xtrans".
    #[arg(long, default_value = "bayer")]
    cfa: String,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ShapeMismatch(_)
        | Error::Dimension(_)
        | Error::Parameter(_)
        | Error::Contract(_)
        | Error::Format { .. } => 2,
        Error::MissingFile(_) | Error::Io { .. } => 3,
        Error::Numeric(_) => 4,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Enhance(args) => commands::enhance(args),
        Command::Eval(args) => commands::eval(args),
        Command::RimefCurve(args) => commands::rimef_curve(args),
        Command::Synth(args) => commands::synth(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
