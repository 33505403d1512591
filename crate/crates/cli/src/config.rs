//! Run configuration: a TOML file plus command-line overrides.
//!
//! Every knob lives in one [`RunConfig`] so a run can be reproduced from the
//! `resolved-config.toml` that each command writes next to its outputs. The
//! file is optional; defaults match the library defaults, and any field can be
//! overridden from the command line without a file at all.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spanmatch::{EncoderConfig, HeadKind, Scheme, SpanMode, TrainConfig};

/// A problem with the run configuration (as opposed to a runtime failure).
/// Anything wrapping one of these exits with status 1.
#[derive(Debug)]
pub struct ConfigProblem(pub String);

impl fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigProblem {}

/// Shorthand for bailing out with a [`ConfigProblem`].
macro_rules! config_bail {
    ($($arg:tt)*) => {
        return Err(crate::config::ConfigProblem(format!($($arg)*)).into())
    };
}
pub(crate) use config_bail;

/// What kind of spans the model is trained on. This decides both the span
/// feature mode and how per-span probabilities are decoded into a final set:
///
/// * `flat-ner`: difference features, non-overlapping output.
/// * `nested-ner`: difference + sum features, output may nest.
/// * `chunking`: trained like nested (sum features included) but decoded
///   flat, since chunks never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    FlatNer,
    NestedNer,
    Chunking,
}

impl Task {
    pub fn span_mode(self) -> SpanMode {
        match self {
            Task::FlatNer => SpanMode::Flat,
            Task::NestedNer | Task::Chunking => SpanMode::Nested,
        }
    }

    /// Whether decoded output must be non-overlapping.
    pub fn flat_decode(self) -> bool {
        !matches!(self, Task::NestedNer)
    }

    /// Whether corpora for this task are JSONL span files rather than BIO.
    pub fn nested_files(self) -> bool {
        matches!(self, Task::NestedNer)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::FlatNer => "flat-ner",
            Task::NestedNer => "nested-ner",
            Task::Chunking => "chunking",
        }
    }
}

fn default_task() -> Task {
    Task::FlatNer
}

/// Corpus and embedding locations. All optional in the file; each command
/// checks for the ones it actually needs and names the missing field.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// BIO tag scheme: "iob1", "iob2", or "auto" (default) to sniff per file.
    pub scheme: Option<String>,
}

/// Encoder hyperparameters. The span feature mode is not listed here because
/// it follows from `task`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_window: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub span_dim: usize,
    pub max_span_width: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::default();
        EncoderSection {
            word_dim: d.word_dim,
            char_dim: d.char_dim,
            char_filters: d.char_filters,
            char_window: d.char_window,
            lstm_layers: d.lstm_layers,
            lstm_hidden: d.lstm_hidden,
            span_dim: d.span_dim,
            max_span_width: d.max_span_width,
        }
    }
}

/// Training hyperparameters. `max_span_width` is not repeated here; training
/// enumerates the same widths the encoder scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub head: HeadKind,
    pub k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub eta0: f64,
    pub rho: f64,
    pub clip: f64,
    pub dropout: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub prob_floor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            head: d.head,
            k: d.k,
            batch_size: d.batch_size,
            epochs: d.epochs,
            eta0: d.eta0,
            rho: d.rho,
            clip: d.clip,
            dropout: d.dropout,
            seed: d.seed,
            train_fraction: d.train_fraction,
            prob_floor: d.prob_floor,
        }
    }
}

/// The full resolved configuration for a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub paths: PathsSection,
    pub encoder: EncoderSection,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: default_task(),
            paths: PathsSection::default(),
            encoder: EncoderSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl RunConfig {
    /// Load from a TOML file, or start from defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| {
                    ConfigProblem(format!("cannot read config file `{}`", p.display()))
                })?;
                let cfg: RunConfig = toml::from_str(&text).map_err(|e| {
                    ConfigProblem(format!("config file `{}`: {e}", p.display()))
                })?;
                Ok(cfg)
            }
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            word_dim: self.encoder.word_dim,
            char_dim: self.encoder.char_dim,
            char_filters: self.encoder.char_filters,
            char_window: self.encoder.char_window,
            lstm_layers: self.encoder.lstm_layers,
            lstm_hidden: self.encoder.lstm_hidden,
            span_dim: self.encoder.span_dim,
            max_span_width: self.encoder.max_span_width,
            mode: self.task.span_mode(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            head: self.train.head,
            k: self.train.k,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            eta0: self.train.eta0,
            rho: self.train.rho,
            clip: self.train.clip,
            dropout: self.train.dropout,
            seed: self.train.seed,
            max_span_width: self.encoder.max_span_width,
            train_fraction: self.train.train_fraction,
            prob_floor: self.train.prob_floor,
        }
    }

    /// BIO tag scheme for corpus files, from `paths.scheme`.
    pub fn scheme(&self) -> Result<Scheme> {
        match self.paths.scheme.as_deref() {
            None | Some("auto") => Ok(Scheme::Auto),
            Some("iob1") => Ok(Scheme::Iob1),
            Some("iob2") => Ok(Scheme::Iob2),
            Some(other) => {
                config_bail!("paths.scheme: unknown scheme `{other}` (expected `iob1`, `iob2`, or `auto`)")
            }
        }
    }

    /// Hex digest of everything that shapes the network: the task plus the
    /// encoder geometry. Stored in checkpoints at train time and checked when
    /// a checkpoint is loaded, so a model is never run under a config it was
    /// not trained with.
    pub fn digest(&self) -> String {
        let summary = serde_json::json!({
            "task": self.task,
            "encoder": {
                "word_dim": self.encoder.word_dim,
                "char_dim": self.encoder.char_dim,
                "char_filters": self.encoder.char_filters,
                "char_window": self.encoder.char_window,
                "lstm_layers": self.encoder.lstm_layers,
                "lstm_hidden": self.encoder.lstm_hidden,
                "span_dim": self.encoder.span_dim,
                "max_span_width": self.encoder.max_span_width,
                "mode": self.task.span_mode(),
            },
        });
        let mut hasher = Sha256::new();
        hasher.update(summary.to_string().as_bytes());
        let out = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in out.iter() {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    /// Serialize to TOML, suitable for `resolved-config.toml`.
    pub fn to_toml(&self) -> Result<String> {
        let body = toml::to_string_pretty(self).context("serializing resolved config")?;
        Ok(body)
    }

    /// Write `resolved-config.toml` into `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("resolved-config.toml");
        std::fs::write(&path, self.to_toml()?)
            .with_context(|| format!("writing `{}`", path.display()))?;
        Ok(path)
    }
}

/// Command-line overrides for any [`RunConfig`] field. Flags given here win
/// over the config file; omitted flags leave the file (or default) value.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Task: flat-ner, nested-ner, or chunking.
    #[arg(long, value_enum, help_heading = "Config overrides")]
    pub task: Option<Task>,

    /// Training corpus file.
    #[arg(long, value_name = "FILE", help_heading = "Config overrides")]
    pub train_file: Option<PathBuf>,

    /// Development corpus file.
    #[arg(long, value_name = "FILE", help_heading = "Config overrides")]
    pub dev_file: Option<PathBuf>,

    /// Test corpus file.
    #[arg(long, value_name = "FILE", help_heading = "Config overrides")]
    pub test_file: Option<PathBuf>,

    /// Pretrained word embeddings in text format.
    #[arg(long, value_name = "FILE", help_heading = "Config overrides")]
    pub embeddings: Option<PathBuf>,

    /// BIO tag scheme: iob1, iob2, or auto.
    #[arg(long, value_name = "SCHEME", help_heading = "Config overrides")]
    pub scheme: Option<String>,

    /// Word embedding width (must match the embeddings file).
    #[arg(long, value_name = "N", help_heading = "Config overrides")]
    pub word_dim: Option<usize>,

    /// Character embedding width.
    #[arg(long, value_name = "N", help_heading = "Config overrides")]
    pub char_dim: Option<usize>,

    /// Number of character convolution filters.
    #[arg(long, value_name = "N", help_heading = "Config overrides")]
    pub char_filters: Option<usize>,

    /// Character convolution window size.
    #[arg(long, value_name = "N", help_heading = "Config overrides")]
    pub char_window: Option<usize>,

    /// Number of stacked bidirectional LSTM layers.
    #[arg(long, value_name = "N", help_heading = "Config overrides")]
    pub lstm_layers: Option<usize>,

    /// Hidden size per LSTM direction.
    #[arg(long, value_name = "N", help_heading = "Config overrides")]
    pub lstm_hidden: Option<usize>,

    /// Projected span representation width.
    #[arg(long, value_name = "N", help_heading = "Config overrides")]
    pub span_dim: Option<usize>,

    /// Maximum candidate span width.
    #[arg(long, value_name = "N", help_heading = "Config overrides")]
    pub max_span_width: Option<usize>,

    /// Label head: classifier or instance.
    #[arg(long, value_parser = parse_head, help_heading = "Config overrides")]
    pub head: Option<HeadKind>,

    /// Support sentences per query (random at train time, nearest at test).
    #[arg(long, value_name = "N", help_heading = "Config overrides")]
    pub k: Option<usize>,

    /// Sentences per training batch.
    #[arg(long, value_name = "N", help_heading = "Config overrides")]
    pub batch_size: Option<usize>,

    /// Training epochs.
    #[arg(long, value_name = "N", help_heading = "Config overrides")]
    pub epochs: Option<usize>,

    /// Initial learning rate.
    #[arg(long, value_name = "X", help_heading = "Config overrides")]
    pub eta0: Option<f64>,

    /// Learning-rate decay per epoch: eta0 / (1 + rho * epoch).
    #[arg(long, value_name = "X", help_heading = "Config overrides")]
    pub rho: Option<f64>,

    /// Gradient clipping threshold (L2 norm).
    #[arg(long, value_name = "X", help_heading = "Config overrides")]
    pub clip: Option<f64>,

    /// Dropout rate on LSTM inputs and outputs.
    #[arg(long, value_name = "X", help_heading = "Config overrides")]
    pub dropout: Option<f64>,

    /// Random seed for initialization, shuffling, and dropout.
    #[arg(long, value_name = "N", help_heading = "Config overrides")]
    pub seed: Option<u64>,

    /// Fraction of training sentences to use (for size ablations).
    #[arg(long, value_name = "X", help_heading = "Config overrides")]
    pub train_fraction: Option<f64>,

    /// Floor applied inside log() in the training loss.
    #[arg(long, value_name = "X", help_heading = "Config overrides")]
    pub prob_floor: Option<f64>,
}

fn parse_head(s: &str) -> Result<HeadKind, String> {
    match s {
        "classifier" => Ok(HeadKind::Classifier),
        "instance" => Ok(HeadKind::Instance),
        other => Err(format!(
            "unknown head `{other}` (expected `classifier` or `instance`)"
        )),
    }
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! take {
            ($($field:ident => $slot:expr;)*) => {
                $(if let Some(v) = self.$field.clone() { $slot = v; })*
            };
        }
        take! {
            task => cfg.task;
            word_dim => cfg.encoder.word_dim;
            char_dim => cfg.encoder.char_dim;
            char_filters => cfg.encoder.char_filters;
            char_window => cfg.encoder.char_window;
            lstm_layers => cfg.encoder.lstm_layers;
            lstm_hidden => cfg.encoder.lstm_hidden;
            span_dim => cfg.encoder.span_dim;
            max_span_width => cfg.encoder.max_span_width;
            head => cfg.train.head;
            k => cfg.train.k;
            batch_size => cfg.train.batch_size;
            epochs => cfg.train.epochs;
            eta0 => cfg.train.eta0;
            rho => cfg.train.rho;
            clip => cfg.train.clip;
            dropout => cfg.train.dropout;
            seed => cfg.train.seed;
            train_fraction => cfg.train.train_fraction;
            prob_floor => cfg.train.prob_floor;
        }
        if let Some(p) = &self.train_file {
            cfg.paths.train = Some(p.clone());
        }
        if let Some(p) = &self.dev_file {
            cfg.paths.dev = Some(p.clone());
        }
        if let Some(p) = &self.test_file {
            cfg.paths.test = Some(p.clone());
        }
        if let Some(p) = &self.embeddings {
            cfg.paths.embeddings = Some(p.clone());
        }
        if let Some(s) = &self.scheme {
            cfg.paths.scheme = Some(s.clone());
        }
    }
}

/// `--config FILE` plus the override flags, shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file; omitted fields fall back to defaults.
    #[arg(short, long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub overrides: Overrides,
}

impl ConfigArgs {
    /// Load the file (if any), apply overrides, and validate.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        self.overrides.apply(&mut cfg);
        cfg.encoder_config().validate()?;
        cfg.train_config().validate()?;
        cfg.scheme()?;
        Ok(cfg)
    }
}
