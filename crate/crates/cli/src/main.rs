//! `coilscope`: generate synthetic coil data, train, evaluate, predict.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

mod commands;
mod record;
mod units;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coilscope_core::Error as CoreError;

use crate::units::parse_frequency;

#[derive(Debug, Parser)]
#[command(name = "coilscope", version, about = "Coil inductance and Q identification from images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic coil dataset with oracle labels.
    Generate(GenerateArgs),
    /// Train a model on a manifest, split by coil.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Predict L and Q for one image at one frequency.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory for images/, manifest.jsonl and run.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = coilscope_core::dataset::DEFAULT_NUM_COILS)]
    pub coils: usize,
    /// Comma-separated, with optional k/M suffixes.
    #[arg(long, value_delimiter = ',', value_parser = parse_frequency, default_value = "85k,200k,1M,6.78M,13.56M")]
    pub freqs: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for model.cnet, loss.csv and run.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Coils assigned to the training split; the rest are held out.
    #[arg(long, default_value_t = 16)]
    pub train_coils: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    /// Seeds the split, the initialization and the shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_shuffle: bool,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    pub early_stop: Option<usize>,
    /// Also write checkpoints/epoch_NNNN.cnet every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Output channels of the three convolution blocks.
    #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
    pub channels: Vec<usize>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run record of the training run; with --split, restricts evaluation
    /// to that run's train or test coils.
    #[arg(long, requires = "split")]
    pub run: Option<PathBuf>,
    #[arg(long, requires = "run")]
    pub split: Option<Split>,
    /// Report path; defaults to eval_report.json next to the checkpoint.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Binary PGM, at least 64×64.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_parser = parse_frequency)]
    pub freq: f64,
    /// Known `L,Q` (henries, dimensionless) to report relative errors.
    #[arg(long, value_parser = parse_label)]
    pub label: Option<(f64, f64)>,
    /// Write a run record here.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

fn parse_label(text: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = text.split(',').collect();
    let [l, q] = parts[..] else {
        return Err(format!("expected L,Q, got {text:?}"));
    };
    let parse = |s: &str| -> Result<f64, String> {
        let v: f64 = s.trim().parse().map_err(|_| format!("invalid number {s:?}"))?;
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(format!("labels must be positive, got {s:?}"))
        }
    };
    Ok((parse(l)?, parse(q)?))
}

/// Worker threads from `COILSCOPE_THREADS`, default 1.
pub fn threads() -> anyhow::Result<usize> {
    match std::env::var("COILSCOPE_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => anyhow::bail!("COILSCOPE_THREADS must be a positive integer, got {v:?}"),
        },
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err.chain().any(|c| {
        matches!(
            c.downcast_ref::<CoreError>(),
            Some(CoreError::Diverged { .. } | CoreError::NonFinite(_))
        )
    });
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
