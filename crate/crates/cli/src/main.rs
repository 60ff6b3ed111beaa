//! `jlvae`: prepare data, train, score, evaluate and stress-test the joint
//! latent contextual anomaly detector.
//!
//! Every command writes its outputs plus `run_manifest.json` into `--out`.
//! On failure it prints one JSON object `{"error": {...}}` to stderr and
//! exits with status 1. Log level comes from `RUST_LOG` (default `info`).

mod commands;
mod config;
mod eval;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use jlvae::scoring::ScoreMethod;

use crate::config::{Preset, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "jlvae",
    version,
    about = "Contextual anomaly detection with a joint latent VAE"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter and encode a raw KDDCup99 CSV into a prepared dataset.
    Preprocess {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Draw a synthetic dataset (`train/` and `test/` splits).
    Synth,
    /// Train on a prepared dataset; writes checkpoint.json and history.csv.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a prepared dataset with a checkpoint; writes scores.csv.
    Score {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// recon_error or recon_probability.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        target_rate: Option<f64>,
    },
    /// Stratified k-fold comparison against Isolation Forest and LOF.
    Eval {
        /// Prepared dataset directory.
        #[arg(long, conflicts_with = "input")]
        data: Option<PathBuf>,
        /// Raw KDDCup99 CSV; preprocessing is refit on each training fold.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        k_folds: Option<usize>,
        #[arg(long)]
        subsample: Option<usize>,
    },
    /// Corrupt attributes of clean normals and count flags per spec.
    Robustness {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Labelled test set used for calibration and the normal sample.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        n_rows: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Preprocess { .. } => "preprocess",
            Command::Synth => "synth",
            Command::Train { .. } => "train",
            Command::Score { .. } => "score",
            Command::Eval { .. } => "eval",
            Command::Robustness { .. } => "robustness",
        }
    }
}

fn set<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::resolve(
        cli.common.config.as_deref(),
        cli.common.preset,
        cli.common.seed,
    )?;
    let out = commands::require(&cli.common.out, "--out")?.to_path_buf();
    match cli.command {
        Command::Preprocess { input } => {
            set(&mut cfg.data.input, input);
            let input = commands::require(&cfg.data.input, "--input")?.to_path_buf();
            commands::preprocess(&cfg, &input, &out)
        }
        Command::Synth => commands::synth(&cfg, &out),
        Command::Train { data } => {
            set(&mut cfg.data.dataset, data);
            let data = commands::require(&cfg.data.dataset, "--data")?.to_path_buf();
            commands::train_cmd(&cfg, &data, &out)
        }
        Command::Score {
            checkpoint,
            data,
            method,
            samples,
            target_rate,
        } => {
            set(&mut cfg.data.checkpoint, checkpoint);
            set(&mut cfg.data.dataset, data);
            if let Some(m) = method {
                cfg.score.method = m.parse::<ScoreMethod>()?;
            }
            if let Some(s) = samples {
                cfg.score.samples = s;
            }
            set(&mut cfg.score.target_rate, target_rate);
            cfg.validate()?;
            let ck = commands::require(&cfg.data.checkpoint, "--checkpoint")?.to_path_buf();
            let data = commands::require(&cfg.data.dataset, "--data")?.to_path_buf();
            commands::score(&cfg, &ck, &data, &out)
        }
        Command::Eval {
            data,
            input,
            k_folds,
            subsample,
        } => {
            if data.is_some() || input.is_some() {
                cfg.data.dataset = data;
                cfg.data.input = input;
            }
            if let Some(k) = k_folds {
                cfg.eval.k_folds = k;
            }
            set(&mut cfg.eval.subsample, subsample);
            cfg.validate()?;
            let (d, i) = (cfg.data.dataset.clone(), cfg.data.input.clone());
            eval::eval(&cfg, d.as_deref(), i.as_deref(), &out).map(|_| ())
        }
        Command::Robustness {
            checkpoint,
            data,
            method,
            n_rows,
        } => {
            set(&mut cfg.data.checkpoint, checkpoint);
            set(&mut cfg.data.dataset, data);
            if let Some(m) = method {
                cfg.robustness.method = m.parse::<ScoreMethod>()?;
            }
            if let Some(n) = n_rows {
                cfg.robustness.n_rows = n;
            }
            let ck = commands::require(&cfg.data.checkpoint, "--checkpoint")?.to_path_buf();
            let data = commands::require(&cfg.data.dataset, "--data")?.to_path_buf();
            commands::robustness(&cfg, &ck, &data, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = serde_json::json!({
                "error": {
                    "command": name,
                    "message": e.to_string(),
                    "causes": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
                }
            });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
