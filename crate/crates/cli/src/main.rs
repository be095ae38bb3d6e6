//! `touchseq`: synthesize data, build pair manifests, pretrain, fine-tune
//! and evaluate.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use touchseq::touchseqnet::Ablation;
use touchseq::Error;

#[derive(Parser)]
#[command(name = "touchseq", version, about = "Touch-dynamics pretraining and pair verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Hyperparameter sources shared by the model commands. Later sources win:
/// defaults, then `--config`, then each `--set`, then dedicated flags.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// `key = value` file; `#` starts a comment
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set kernel=7`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed; falls back to TSQN_SEED, then the config file
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-user gesture CSV
    Synth {
        #[arg(long, default_value_t = 8)]
        users: usize,
        #[arg(long, default_value_t = 40)]
        samples: usize,
        #[arg(long, default_value_t = 48)]
        min_len: usize,
        #[arg(long, default_value_t = 96)]
        max_len: usize,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a balanced pair manifest (JSON lines) over one split of a dataset
    Pairs {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 400)]
        n: usize,
        /// Which samples to pair: the fine-tuning train, val or test split, or all
        #[arg(long, default_value = "test")]
        split: commands::Split,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-supervised pretraining; writes a checkpoint and a loss log
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        mask_ratio: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Loss log path; defaults to `<out>.loss.csv`
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fine-tune the pair verifier; writes a checkpoint and a metric log
    Finetune {
        #[arg(long)]
        data: PathBuf,
        /// Pretrained checkpoint; not read for `--ablation no-pretrain`
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long, default_value = "full", value_parser = parse_ablation)]
        ablation: Ablation,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
        #[arg(long, default_value_t = 200)]
        val_pairs: usize,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long)]
        out: PathBuf,
        /// Metric log path; defaults to `<out>.metrics.csv`
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a fine-tuned model on a pair manifest
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// CSV with columns `accuracy,f1,auc`
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// 2 for configuration problems, 3 for data and file problems, 4 when
/// training diverges.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Param(_) | Error::Validation(_) | Error::Shape { .. } | Error::Contract(_) => 2,
        Error::Divergence(_) | Error::Numeric(_) => 4,
        Error::Data(_) | Error::Format(_) | Error::Metric(_) | Error::Checkpoint(_) | Error::Io { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            users,
            samples,
            min_len,
            max_len,
            separation,
            seed,
            out,
        } => commands::synth(users, samples, (min_len, max_len), separation, seed, &out),
        Command::Pairs {
            data,
            n,
            split,
            train_fraction,
            seed,
            out,
        } => commands::pairs(&data, n, split, train_fraction, seed, &out),
        Command::Pretrain {
            data,
            cfg,
            mask_ratio,
            epochs,
            out,
            log,
        } => commands::pretrain(&data, &cfg, mask_ratio, epochs, &out, log.as_deref()),
        Command::Finetune {
            data,
            pretrained,
            ablation,
            cfg,
            epochs,
            pairs,
            val_pairs,
            train_fraction,
            out,
            log,
        } => commands::finetune(commands::FinetuneArgs {
            data: &data,
            pretrained: pretrained.as_deref(),
            ablation,
            cfg: &cfg,
            epochs,
            n_pairs: pairs,
            n_val: val_pairs,
            train_fraction,
            out: &out,
            log: log.as_deref(),
        }),
        Command::Evaluate {
            model,
            data,
            pairs,
            cfg,
            out,
        } => commands::evaluate(&model, &data, &pairs, &cfg, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
