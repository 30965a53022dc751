//! `sacc`: train, evaluate, ablate, plot and preview augmentations.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on configuration errors.

mod commands;
mod config;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "sacc", version, about = "Contrastive image clustering with strong and weak augmentations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults are used for anything it omits.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dotted-key overrides such as `--train.epochs 5` or `model.cluster_head.num_clusters=4`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<config::RunConfigFile, CliError> {
        let overrides = config::parse_overrides(&self.overrides)?;
        config::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, metric logs and a config snapshot.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a checkpoint on the configured dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for the report and heatmap; defaults to `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train every requested variant for every seed and tabulate the scores.
    Ablate {
        /// `all` or a comma-separated list such as `weak_weak,weak_strong`.
        #[arg(long, default_value = "all")]
        modes: String,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Draw metric curves and a t-SNE scatter from a run directory.
    Plot {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        tsne_seed: u64,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f32,
        #[arg(long, default_value_t = 1000)]
        tsne_epochs: usize,
    },
    /// Render original | weak | weak | strong for each input image.
    AugmentPreview {
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output PNG; defaults to `augment_preview.png` in `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dotted-key override, repeatable: `--set aug.strong.num_ops=2`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { resume, cfg } => commands::train(&cfg.load()?, resume.as_deref()),
        Command::Eval { checkpoint, out, cfg } => commands::eval(&cfg.load()?, &checkpoint, out),
        Command::Ablate { modes, seeds, cfg } => {
            let modes = commands::parse_modes(&modes)?;
            commands::ablate_cmd(&cfg.load()?, &modes, &seeds)
        }
        Command::Plot {
            run_dir,
            tsne_seed,
            perplexity,
            tsne_epochs,
        } => commands::plot(
            &run_dir,
            plots::TsneParams {
                seed: tsne_seed,
                perplexity,
                epochs: tsne_epochs,
            },
        ),
        Command::AugmentPreview {
            config,
            seed,
            out,
            set,
            images,
        } => {
            let overrides = config::parse_overrides(&set)?;
            let cfg = config::load(config.as_deref(), &overrides)?;
            commands::augment_preview(&cfg, &images, seed, out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
