//! `macnet`: synthesize data, split manifests, train, evaluate and render reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 input error, 3 numeric fault.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bad flags, config keys or values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "macnet", version, about = "Multi-scale atrous CNN for food-place classification")]
pub struct Cli {
    /// Root for default output locations.
    #[arg(long, global = true, env = "MACNET_OUT_ROOT", default_value = "runs")]
    pub out_root: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic food-place dataset with an event-aware split.
    Synth(SynthArgs),
    /// Assign events of a manifest to train/val/test.
    Split(SplitArgs),
    /// Train a model and write history, checkpoints and test reports.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Render charts and a summary from a report directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory [default: <out-root>/synth].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat `key = value` file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for image content and the event split.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of classes.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Events generated per class.
    #[arg(long)]
    pub events_per_class: Option<usize>,
    /// `n` or `min,max`.
    #[arg(long)]
    pub images_per_event: Option<String>,
    /// `n` or `height,width`.
    #[arg(long)]
    pub image_size: Option<String>,
    /// `train,val,test` image fractions.
    #[arg(long)]
    pub ratios: Option<String>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the split manifest [default: overwrite --manifest].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for the per-class event shuffle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `train,val,test` image fractions.
    #[arg(long, default_value = "0.72,0.09,0.19")]
    pub ratios: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory [default: <out-root>/run].
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the full-size profile (batch 32, 100 epochs, full widths, 224x224).
    #[arg(long)]
    pub paper_faithful: bool,
    /// Continue from <run-dir>/checkpoints/last.ckpt.
    #[arg(long)]
    pub resume: bool,
    /// Seed for batch order, augmentation and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for weight initialization.
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Number of epochs (at least 1).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Images per SGD step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Scale of stem and stage widths relative to the full network.
    #[arg(long)]
    pub width_multiplier: Option<f64>,
    /// Base learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs between learning-rate decays.
    #[arg(long)]
    pub lr_step: Option<usize>,
    /// Learning-rate decay factor.
    #[arg(long)]
    pub lr_gamma: Option<f64>,
    /// SGD momentum.
    #[arg(long)]
    pub momentum: Option<f64>,
    /// L2 weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// `n` or `height,width`.
    #[arg(long)]
    pub input_size: Option<String>,
    /// Disable training-time augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Also keep `epoch_NNN.ckpt` every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// f32 or f64.
    #[arg(long)]
    pub precision: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Report directory [default: <out-root>/eval/<split>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Images per forward pass.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// f32 or f64.
    #[arg(long, default_value = "f32")]
    pub precision: String,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory holding per_class.csv, confusion.csv and optionally summary.txt.
    #[arg(long)]
    pub input: PathBuf,
    /// Where the SVGs and summary go [default: --input].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<macnet::Error>() {
        Some(macnet::Error::NumericFault { .. } | macnet::Error::TrainingDiverged { .. }) => 3,
        Some(macnet::Error::Config(_) | macnet::Error::Parameter(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
