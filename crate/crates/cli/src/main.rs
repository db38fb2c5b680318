mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Synthetic drone data, keypoint-to-pose training and evaluation.
#[derive(Debug, Parser)]
#[command(name = "raypose", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Global {
    /// Flat key = value config file (supports `include = other.cfg`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Replace an existing non-empty output directory.
    #[arg(long, global = true)]
    pub overwrite: bool,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a dataset (or only plan it).
    Gen {
        #[arg(long)]
        preset: Option<String>,
        /// Print the composition without rendering anything.
        #[arg(long)]
        plan_only: bool,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        epochs: Option<String>,
        #[arg(long)]
        lr: Option<String>,
        #[arg(long)]
        strategy: Option<String>,
        /// Decoder variant 1-4.
        #[arg(long)]
        decoder: Option<String>,
        /// `on` or `off`; off feeds ground-truth keypoints and labels to the decoder.
        #[arg(long)]
        encoder: Option<String>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        data: Option<String>,
        /// Path, or `best` / `epoch_NNN` inside the training run directory.
        #[arg(long)]
        ckpt: Option<String>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Keypoints + PnP with the true size prior.
    Baseline {
        #[arg(long)]
        data: Option<String>,
        /// `gt` or `encoder`.
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        ckpt: Option<String>,
    },
    /// Gaussian smoothing of predicted tracks.
    Smooth {
        #[arg(long)]
        input: Option<String>,
        #[arg(long)]
        sigma: Option<String>,
    },
    /// SVG plots of prediction tracks or a feature projection.
    Plot {
        #[arg(long)]
        input: Option<String>,
    },
    /// Standardized PCA of image descriptors over one or more datasets.
    Analyze {
        /// Comma-separated dataset roots.
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        samples: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
