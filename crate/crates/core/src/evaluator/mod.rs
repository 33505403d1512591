//! Span-level precision/recall/F1 (exact-match, micro-averaged over the
//! corpus), a two-head comparison harness with mean ± stddev over repeated
//! runs, and the training-size ablation grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CharVocab, EmbeddingTable, LabelSet, LabeledSpan};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::model::Model;
use crate::trainer::{train, TrainConfig};

/// Exact-match span counts with derived percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Percent: 100 · tp / (tp + fp), 0 when no predictions.
    pub precision: f64,
    /// Percent: 100 · tp / (tp + fn), 0 when no gold spans.
    pub recall: f64,
    /// Percent: harmonic mean of precision and recall, 0 when both are 0.
    pub f1: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 {
            0.0
        } else {
            100.0 * tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            100.0 * tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Micro-averaged exact-match span F1. A prediction counts as correct when
/// (sentence id, a, b, label) all match a gold span.
///
/// Every predicted sentence id must exist on the gold side and ids may not
/// repeat; gold sentences absent from `pred` count as having no
/// predictions.
pub fn span_f1(
    gold: &[(usize, Vec<LabeledSpan>)],
    pred: &[(usize, Vec<LabeledSpan>)],
) -> Result<Metrics> {
    let mut gold_by_id: BTreeMap<usize, BTreeSet<LabeledSpan>> = BTreeMap::new();
    for (sid, spans) in gold {
        if gold_by_id
            .insert(*sid, spans.iter().cloned().collect())
            .is_some()
        {
            return Err(Error::MisalignedCorpora {
                details: format!("gold sentence id {sid} appears twice"),
            });
        }
    }
    let mut pred_by_id: BTreeMap<usize, BTreeSet<LabeledSpan>> = BTreeMap::new();
    for (sid, spans) in pred {
        if !gold_by_id.contains_key(sid) {
            return Err(Error::MisalignedCorpora {
                details: format!("predicted sentence id {sid} has no gold sentence"),
            });
        }
        if pred_by_id
            .insert(*sid, spans.iter().cloned().collect())
            .is_some()
        {
            return Err(Error::MisalignedCorpora {
                details: format!("predicted sentence id {sid} appears twice"),
            });
        }
    }

    let empty = BTreeSet::new();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (sid, g) in &gold_by_id {
        let p = pred_by_id.get(sid).unwrap_or(&empty);
        tp += g.intersection(p).count();
        fp += p.difference(g).count();
        fn_ += g.difference(p).count();
    }
    Ok(Metrics::from_counts(tp, fp, fn_))
}

/// Aligned text table of named metric rows, percentages to two decimals.
pub fn format_metrics_table(rows: &[(String, Metrics)]) -> String {
    let name_w = rows
        .iter()
        .map(|(n, _)| n.len())
        .chain(std::iter::once("run".len()))
        .max()
        .unwrap_or(3);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<name_w$}  {:>6} {:>6} {:>6}  {:>9} {:>9} {:>9}",
        "run", "tp", "fp", "fn", "precision", "recall", "f1"
    );
    for (name, m) in rows {
        let _ = writeln!(
            s,
            "{:<name_w$}  {:>6} {:>6} {:>6}  {:>9.2} {:>9.2} {:>9.2}",
            name, m.tp, m.fp, m.fn_, m.precision, m.recall, m.f1
        );
    }
    s
}

// ---- head comparison ------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub head: HeadKind,
    /// Test F1 of each run, in run order.
    pub run_f1: Vec<f64>,
    pub mean_f1: f64,
    /// Sample standard deviation; 0 for a single run.
    pub stddev_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadComparison {
    pub rows: Vec<ComparisonRow>,
}

fn mean_and_stddev(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Train one fresh model per (head, run) and measure test F1 with the
/// deployed inference path. Run r uses seed `base.seed + r` for both
/// parameter initialization and the training loop.
pub fn compare_heads(
    encoder_config: &EncoderConfig,
    base: &TrainConfig,
    labels: &LabelSet,
    train_c: &Corpus,
    dev: &Corpus,
    test: &Corpus,
    table: &EmbeddingTable,
    runs: usize,
) -> Result<HeadComparison> {
    if runs == 0 {
        return Err(Error::config("runs", "must be at least 1"));
    }
    let chars = CharVocab::from_corpus(train_c);
    let mut rows = Vec::new();
    for head in [HeadKind::Classifier, HeadKind::Instance] {
        let mut run_f1 = Vec::with_capacity(runs);
        for r in 0..runs {
            let seed = base.seed + r as u64;
            let mut cfg = base.clone();
            cfg.head = head;
            cfg.seed = seed;
            let mut model = Model::new(
                encoder_config.clone(),
                head,
                labels.clone(),
                chars.clone(),
                seed,
            )?;
            train(&mut model, &cfg, train_c, dev, table)?;
            let m = crate::trainer::dev_metrics(&model, train_c, test, cfg.k, table)?;
            run_f1.push(m.f1);
        }
        let (mean_f1, stddev_f1) = mean_and_stddev(&run_f1);
        rows.push(ComparisonRow {
            head,
            run_f1,
            mean_f1,
            stddev_f1,
        });
    }
    Ok(HeadComparison { rows })
}

pub fn format_comparison(cmp: &HeadComparison) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<12}  {:>8} {:>8}  runs", "head", "mean F1", "stddev");
    for row in &cmp.rows {
        let runs = row
            .run_f1
            .iter()
            .map(|f| format!("{f:.2}"))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(
            s,
            "{:<12}  {:>8.2} {:>8.2}  [{}]",
            format!("{:?}", row.head).to_lowercase(),
            row.mean_f1,
            row.stddev_f1,
            runs
        );
    }
    s
}

// ---- training-size ablation -----------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub head: HeadKind,
    pub fraction: f64,
    /// Dev F1 at the best epoch of the run.
    pub dev_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Train both heads at each training-set fraction and record best dev F1,
/// the plot-ready counterpart of a shrinking-training-set curve.
pub fn size_ablation(
    encoder_config: &EncoderConfig,
    base: &TrainConfig,
    labels: &LabelSet,
    train_c: &Corpus,
    dev: &Corpus,
    table: &EmbeddingTable,
    fractions: &[f64],
) -> Result<AblationTable> {
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::config("fractions", "each must lie in (0, 1]"));
        }
    }
    let chars = CharVocab::from_corpus(train_c);
    let mut rows = Vec::new();
    for head in [HeadKind::Classifier, HeadKind::Instance] {
        for &fraction in fractions {
            let mut cfg = base.clone();
            cfg.head = head;
            cfg.train_fraction = fraction;
            let mut model = Model::new(
                encoder_config.clone(),
                head,
                labels.clone(),
                chars.clone(),
                cfg.seed,
            )?;
            let report = train(&mut model, &cfg, train_c, dev, table)?;
            rows.push(AblationRow {
                head,
                fraction,
                dev_f1: report.best_dev_f1,
            });
        }
    }
    Ok(AblationTable { rows })
}

pub fn format_ablation(table: &AblationTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<12}  {:>9}  {:>7}", "head", "fraction", "dev F1");
    for row in &table.rows {
        let _ = writeln!(
            s,
            "{:<12}  {:>9.3}  {:>7.2}",
            format!("{:?}", row.head).to_lowercase(),
            row.fraction,
            row.dev_f1
        );
    }
    s
}
