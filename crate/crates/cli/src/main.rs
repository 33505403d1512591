//! `spanmatch` — train, run, and interrogate span labeling models.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
//! (I/O, malformed data, diverged training, corrupt checkpoint).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{GenArgs, KindArg, Target};
use config::{ConfigArgs, ConfigProblem};

#[derive(Parser)]
#[command(
    name = "spanmatch",
    version,
    about = "Span labeling for flat NER, nested NER, and chunking, with a classifier head or an \
             instance head that labels spans by their nearest training examples.",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the checkpoint plus a per-epoch report.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (model.bin, report.jsonl, resolved-config.toml).
        #[arg(short, long, value_name = "DIR")]
        out: PathBuf,
    },

    /// Predict spans for a corpus with a trained checkpoint.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained model file (model.bin from `train`).
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Which corpus from [paths] to predict.
        #[arg(long, value_enum, default_value = "test")]
        on: Target,
        /// Output directory (predictions.jsonl, resolved-config.toml).
        #[arg(short, long, value_name = "DIR")]
        out: PathBuf,
    },

    /// Score predictions against gold spans (exact-match span F1).
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained model file; predicts first, then scores.
        #[arg(long, value_name = "FILE", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Existing predictions.jsonl to score instead of predicting.
        #[arg(long, value_name = "FILE")]
        predictions: Option<PathBuf>,
        /// Which corpus from [paths] supplies the gold spans.
        #[arg(long, value_enum, default_value = "test")]
        on: Target,
        /// Optional output directory (metrics.json, resolved-config.toml).
        #[arg(short, long, value_name = "DIR")]
        out: Option<PathBuf>,
    },

    /// Show the support neighbors behind one span's prediction.
    Explain {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained instance-head model file.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Which corpus from [paths] holds the query sentence.
        #[arg(long, value_enum, default_value = "test")]
        on: Target,
        /// Query sentence index (0-based) within that corpus.
        #[arg(long, value_name = "IDX")]
        sentence: usize,
        /// Query span as A:B, 1-based inclusive token positions.
        #[arg(long, value_name = "A:B", value_parser = parse_span_arg)]
        span: (usize, usize),
        /// How many neighbors to show.
        #[arg(long, value_name = "N", default_value_t = 5)]
        top: usize,
    },

    /// Retrain both heads at shrinking training-set fractions, tabulate dev F1.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated training-set fractions in (0, 1].
        #[arg(long, value_name = "LIST", default_value = "1,0.5,0.25,0.125")]
        fractions: String,
        /// Output directory (ablation.json, resolved-config.toml).
        #[arg(short, long, value_name = "DIR")]
        out: PathBuf,
    },

    /// Write every gold span's learned representation as JSON lines.
    DumpFeatures {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained model file.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Which corpus from [paths] to encode.
        #[arg(long, value_enum, default_value = "test")]
        on: Target,
        /// Output directory (features.jsonl, resolved-config.toml).
        #[arg(short, long, value_name = "DIR")]
        out: PathBuf,
    },

    /// Generate a synthetic corpus, embeddings, and a ready-to-run config.
    GenSynthetic {
        /// Corpus shape: flat (BIO files) or nested (JSONL span files).
        #[arg(long, value_enum, default_value = "flat")]
        kind: KindArg,
        /// Training sentences.
        #[arg(long, value_name = "N", default_value_t = 200)]
        n_train: usize,
        /// Development sentences.
        #[arg(long, value_name = "N", default_value_t = 50)]
        n_dev: usize,
        /// Test sentences.
        #[arg(long, value_name = "N", default_value_t = 50)]
        n_test: usize,
        /// Embedding width of the generated vectors.
        #[arg(long, value_name = "N", default_value_t = 24)]
        dim: usize,
        /// Generation seed.
        #[arg(long, value_name = "N", default_value_t = 13)]
        seed: u64,
        /// Output directory for the dataset and config.toml.
        #[arg(short, long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn parse_span_arg(s: &str) -> Result<(usize, usize), String> {
    let Some((a, b)) = s.split_once(':') else {
        return Err("expected A:B (1-based inclusive token positions)".into());
    };
    let a = a
        .trim()
        .parse::<usize>()
        .map_err(|e| format!("bad start `{a}`: {e}"))?;
    let b = b
        .trim()
        .parse::<usize>()
        .map_err(|e| format!("bad end `{b}`: {e}"))?;
    Ok((a, b))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { cfg, out } => commands::cmd_train(&cfg.resolve()?, &out),
        Command::Predict {
            cfg,
            checkpoint,
            on,
            out,
        } => commands::cmd_predict(&cfg.resolve()?, &checkpoint, on, &out),
        Command::Eval {
            cfg,
            checkpoint,
            predictions,
            on,
            out,
        } => commands::cmd_eval(
            &cfg.resolve()?,
            checkpoint.as_deref(),
            predictions.as_deref(),
            on,
            out.as_deref(),
        ),
        Command::Explain {
            cfg,
            checkpoint,
            on,
            sentence,
            span,
            top,
        } => commands::cmd_explain(&cfg.resolve()?, &checkpoint, on, sentence, span, top),
        Command::Ablate {
            cfg,
            fractions,
            out,
        } => commands::cmd_ablate(&cfg.resolve()?, &fractions, &out),
        Command::DumpFeatures {
            cfg,
            checkpoint,
            on,
            out,
        } => commands::cmd_dump_features(&cfg.resolve()?, &checkpoint, on, &out),
        Command::GenSynthetic {
            kind,
            n_train,
            n_dev,
            n_test,
            dim,
            seed,
            out,
        } => commands::cmd_gen_synthetic(&GenArgs {
            kind,
            n_train,
            n_dev,
            n_test,
            dim,
            seed,
            out,
        }),
    }
}

/// 1 for configuration problems (bad TOML, missing paths, checkpoint/config
/// mismatch, invalid hyperparameters), 2 for everything else.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigProblem>().is_some() {
            return 1;
        }
        if let Some(lib) = cause.downcast_ref::<spanmatch::Error>() {
            if lib.is_config() {
                return 1;
            }
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            for cause in err.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::from(exit_code_for(&err))
        }
    }
}
