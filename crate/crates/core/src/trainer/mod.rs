//! The optimization loop: length-bucketed mini-batches, per-batch support
//! sampling for the instance head, backprop through the shared encoder,
//! gradient clipping, Adam with epoch-decayed learning rate, and dev-F1
//! checkpoint selection.

use std::borrow::Cow;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{enumerate_spans, Corpus, EmbeddingTable, Span};
use crate::error::{Error, Result};
use crate::evaluator::span_f1;
use crate::heads::{classifier_loss_graph, nca_loss_graph, sample_support, HeadKind};
use crate::inference::{decode, predict_corpus};
use crate::model::Model;
use crate::numcore::{
    adam_step, clip_global_norm, lr_schedule, AdamState, Graph, GraphParams, NodeId, Tensor,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub head: HeadKind,
    /// Support sentences sampled per batch (training) and retrieved per
    /// query sentence (evaluation).
    pub k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Initial Adam learning rate η₀.
    pub eta0: f64,
    /// Decay rate ρ in η_t = η₀ / (1 + ρ·t), t = completed epochs.
    pub rho: f64,
    /// Global-norm gradient clipping threshold.
    pub clip: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Maximum candidate span width L; must match the encoder's.
    pub max_span_width: usize,
    /// Fraction of the training sentences to use, sampled once up front.
    pub train_fraction: f64,
    /// Floor inside log() when the support misses the gold label entirely.
    pub prob_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            head: HeadKind::Instance,
            k: 50,
            batch_size: 8,
            epochs: 100,
            eta0: 0.001,
            rho: 0.05,
            clip: 5.0,
            dropout: 0.3,
            seed: 1,
            max_span_width: 6,
            train_fraction: 1.0,
            prob_floor: 1e-12,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.eta0 > 0.0) {
            return Err(Error::config("eta0", "must be positive"));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::config("rho", "must be nonnegative"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::config("clip", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if self.max_span_width == 0 {
            return Err(Error::config("max_span_width", "must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::config("train_fraction", "must lie in (0, 1]"));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1.0) {
            return Err(Error::config("prob_floor", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    /// Summed batch losses over the epoch.
    pub train_loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    /// Epoch with maximal dev F1; earliest wins exact ties. `None` when no
    /// epoch ran.
    pub best_epoch: Option<usize>,
    pub best_dev_f1: f64,
}

impl TrainReport {
    /// One JSON object per epoch, then one summary object.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for row in &self.rows {
            serde_json::to_writer(&mut w, row)?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(
            &mut w,
            &serde_json::json!({
                "best_epoch": self.best_epoch,
                "best_dev_f1": self.best_dev_f1,
            }),
        )?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Uniform sentence subsample without replacement, deterministic in `seed`.
/// Sampled sentences keep their token and gold-span content verbatim but
/// are renumbered 0..m (in original corpus order) so that sentence ids stay
/// equal to storage indices.
pub fn subsample_training(corpus: &Corpus, fraction: f64, seed: u64) -> Corpus {
    assert!(
        fraction > 0.0 && fraction <= 1.0,
        "fraction must lie in (0, 1]"
    );
    if fraction >= 1.0 {
        return corpus.clone();
    }
    let n = corpus.sentences.len();
    let keep = ((n as f64) * fraction).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    let (chosen, _) = idx.partial_shuffle(&mut rng, keep);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    let sentences = chosen
        .iter()
        .enumerate()
        .map(|(new_id, &i)| {
            let mut s = corpus.sentences[i].clone();
            s.id = new_id;
            s
        })
        .collect();
    Corpus {
        sentences,
        split: corpus.split,
    }
}

/// Shuffle, stable-sort by length (so equal lengths keep shuffled order),
/// cut into batches, then shuffle batch order.
fn make_batches(n_sentences: usize, lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n_sentences).collect();
    idx.shuffle(rng);
    idx.sort_by_key(|&i| lengths[i]);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size).map(|c| c.to_vec()).collect();
    batches.shuffle(rng);
    batches
}

/// Build the batch loss graph and return the loss node.
fn batch_loss(
    model: &Model,
    cfg: &TrainConfig,
    corpus: &Corpus,
    batch: &[usize],
    table: &EmbeddingTable,
    g: &mut Graph,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let null_id = model.labels.null_id();
    let width = model.config().max_span_width;
    let mut pn = GraphParams::new();

    let mut query_blocks: Vec<NodeId> = Vec::new();
    let mut gold: Vec<usize> = Vec::new();
    for &si in batch {
        let sentence = &corpus.sentences[si];
        let spans = enumerate_spans(sentence, width);
        gold.extend(spans.iter().map(|&sp| sentence.gold_label_of(sp, null_id)));
        query_blocks.push(model.encoder.encode_sentence_spans(
            g,
            &mut pn,
            &model.store,
            sentence,
            &spans,
            &model.chars,
            table,
            cfg.dropout,
        )?);
    }
    let hq = g.concat_cols(&query_blocks)?;

    match cfg.head {
        HeadKind::Classifier => {
            let head = model
                .classifier
                .as_ref()
                .expect("classifier head present by construction");
            classifier_loss_graph(g, &mut pn, &model.store, head, hq, &gold)
        }
        HeadKind::Instance => {
            let pool = sample_support(corpus, cfg.k, batch, width, null_id, rng)?;
            // The support must never contain a sentence from the batch: a
            // query would otherwise see itself among its own neighbors.
            for sid in &pool.sentence_ids {
                assert!(
                    !batch.contains(sid),
                    "support sampling leaked batch sentence {sid}"
                );
            }
            let mut support_blocks: Vec<NodeId> = Vec::new();
            let mut i = 0;
            for &sid in &pool.sentence_ids {
                let start = i;
                while i < pool.items.len() && pool.items[i].sentence_id == sid {
                    i += 1;
                }
                let spans: Vec<Span> = pool.items[start..i].iter().map(|it| it.span).collect();
                support_blocks.push(model.encoder.encode_sentence_spans(
                    g,
                    &mut pn,
                    &model.store,
                    &corpus.sentences[sid],
                    &spans,
                    &model.chars,
                    table,
                    cfg.dropout,
                )?);
            }
            let hs = g.concat_cols(&support_blocks)?;
            let support_labels: Vec<usize> = pool.items.iter().map(|it| it.label).collect();
            nca_loss_graph(
                g,
                hq,
                hs,
                &support_labels,
                &gold,
                model.labels.len(),
                cfg.prob_floor,
            )
        }
    }
}

/// Evaluate span F1 of the current parameters on `dev`, using the deployed
/// inference path (cosine-kNN support for the instance head).
pub fn dev_metrics(
    model: &Model,
    train: &Corpus,
    dev: &Corpus,
    k: usize,
    table: &EmbeddingTable,
) -> Result<crate::evaluator::Metrics> {
    let preds = predict_corpus(model, dev, train, k, table)?;
    let gold: Vec<(usize, Vec<crate::corpus::LabeledSpan>)> = dev
        .sentences
        .iter()
        .map(|s| (s.id, s.gold_spans.clone()))
        .collect();
    let decoded: Vec<(usize, Vec<crate::corpus::LabeledSpan>)> = dev
        .sentences
        .iter()
        .zip(&preds)
        .map(|(s, p)| (s.id, decode(model, p)))
        .collect();
    span_f1(&gold, &decoded)
}

/// Run the full loop. On return the model holds the parameters of the best
/// dev-F1 epoch (or the initial parameters when `epochs` is 0).
pub fn train(
    model: &mut Model,
    cfg: &TrainConfig,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    table: &EmbeddingTable,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_corpus.is_empty() {
        return Err(Error::config("train", "training corpus is empty"));
    }
    if dev_corpus.is_empty() {
        return Err(Error::config("dev", "development corpus is empty"));
    }
    if cfg.max_span_width != model.config().max_span_width {
        return Err(Error::config(
            "max_span_width",
            "training and encoder span-width caps differ",
        ));
    }
    match (cfg.head, model.head) {
        (HeadKind::Classifier, HeadKind::Classifier) | (HeadKind::Instance, HeadKind::Instance) => {}
        _ => {
            return Err(Error::config(
                "head",
                "training head does not match the model's head",
            ))
        }
    }

    let train_c: Cow<Corpus> = if cfg.train_fraction < 1.0 {
        Cow::Owned(subsample_training(
            train_corpus,
            cfg.train_fraction,
            cfg.seed,
        ))
    } else {
        Cow::Borrowed(train_corpus)
    };
    let lengths: Vec<usize> = train_c.sentences.iter().map(|s| s.len()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.store);
    let mut report = TrainReport {
        rows: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        best_dev_f1: f64::NEG_INFINITY,
    };
    let mut best_params: Option<Vec<Tensor>> = None;

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.eta0, cfg.rho);
        let batches = make_batches(train_c.sentences.len(), &lengths, cfg.batch_size, &mut rng);
        let mut epoch_loss = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            model.store.zero_grads();
            let dropout_seed = rng.gen::<u64>();
            let mut g = Graph::new_train(ChaCha8Rng::seed_from_u64(dropout_seed));
            let loss = batch_loss(model, cfg, &train_c, batch, table, &mut g, &mut rng)?;
            let loss_val = g.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::DivergedLoss {
                    epoch,
                    batch: bi,
                    loss: loss_val,
                });
            }
            epoch_loss += loss_val;
            g.backward(loss, &mut model.store)?;
            clip_global_norm(&mut model.store, cfg.clip);
            adam_step(&mut model.store, &mut adam, lr);
        }

        let metrics = dev_metrics(model, &train_c, dev_corpus, cfg.k, table)?;
        if metrics.f1 > report.best_dev_f1 {
            report.best_dev_f1 = metrics.f1;
            report.best_epoch = Some(epoch);
            best_params = Some(
                model
                    .store
                    .iter()
                    .map(|(_, p)| p.value.clone())
                    .collect(),
            );
        }
        report.rows.push(EpochRow {
            epoch,
            lr,
            train_loss: epoch_loss,
            dev_precision: metrics.precision,
            dev_recall: metrics.recall,
            dev_f1: metrics.f1,
        });
    }

    if let Some(best) = best_params {
        for (p, value) in model.store.iter_mut().zip(best) {
            p.value = value;
        }
    }
    if report.rows.is_empty() {
        report.best_dev_f1 = 0.0;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CharVocab, LabelSet, LabeledSpan, Sentence, Split};
    use crate::encoder::{EncoderConfig, SpanMode};

    fn sent(id: usize, tokens: &[&str], gold: &[(usize, usize, usize)]) -> Sentence {
        Sentence {
            id,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            gold_spans: gold
                .iter()
                .map(|&(a, b, label)| LabeledSpan {
                    span: Span::new(a, b),
                    label,
                })
                .collect(),
        }
    }

    /// Six training sentences where "kim"/"lee" are PER and "oslo" is LOC,
    /// plus a two-sentence dev set reusing the same surface forms.
    fn fixture() -> (Corpus, Corpus, LabelSet, EmbeddingTable) {
        let mut labels = LabelSet::new();
        let per = labels.get_or_insert("PER");
        let loc = labels.get_or_insert("LOC");
        let train = Corpus {
            sentences: vec![
                sent(0, &["kim", "went", "home"], &[(1, 1, per)]),
                sent(1, &["lee", "saw", "oslo"], &[(1, 1, per), (3, 3, loc)]),
                sent(2, &["oslo", "is", "calm"], &[(1, 1, loc)]),
                sent(3, &["kim", "met", "lee"], &[(1, 1, per), (3, 3, per)]),
                sent(4, &["they", "like", "oslo"], &[(3, 3, loc)]),
                sent(5, &["lee", "went", "away"], &[(1, 1, per)]),
            ],
            split: Split::Train,
        };
        let dev = Corpus {
            sentences: vec![
                sent(0, &["kim", "saw", "oslo"], &[(1, 1, per), (3, 3, loc)]),
                sent(1, &["lee", "is", "calm"], &[(1, 1, per)]),
            ],
            split: Split::Dev,
        };
        let mut table = EmbeddingTable::new(4);
        use rand::SeedableRng;
        let mut r = ChaCha8Rng::seed_from_u64(77);
        for w in [
            "kim", "lee", "oslo", "went", "home", "saw", "is", "calm", "met", "they", "like",
            "away",
        ] {
            table.insert(w, (0..4).map(|_| r.gen_range(-1.0..1.0)).collect());
        }
        (train, dev, labels, table)
    }

    fn tiny_model(head: HeadKind, labels: &LabelSet, train: &Corpus, seed: u64) -> Model {
        let config = EncoderConfig {
            word_dim: 4,
            char_dim: 3,
            char_filters: 2,
            char_window: 3,
            lstm_layers: 1,
            lstm_hidden: 4,
            span_dim: 6,
            max_span_width: 2,
            mode: SpanMode::Flat,
        };
        let chars = CharVocab::from_corpus(train);
        Model::new(config, head, labels.clone(), chars, seed).unwrap()
    }

    fn cfg(head: HeadKind, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            head,
            k: 3,
            batch_size: 2,
            epochs,
            eta0: 0.01,
            rho: 0.05,
            clip: 5.0,
            dropout: 0.1,
            seed,
            max_span_width: 2,
            train_fraction: 1.0,
            prob_floor: 1e-12,
        }
    }

    fn param_bits(model: &Model) -> Vec<Vec<u64>> {
        model
            .store
            .iter()
            .map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect())
            .collect()
    }

    #[test]
    fn zero_epochs_keeps_initial_parameters() {
        let (train_c, dev, labels, table) = fixture();
        let mut model = tiny_model(HeadKind::Classifier, &labels, &train_c, 5);
        let before = param_bits(&model);
        let report = train(&mut model, &cfg(HeadKind::Classifier, 0, 5), &train_c, &dev, &table)
            .unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.best_epoch, None);
        assert_eq!(param_bits(&model), before);
    }

    #[test]
    fn same_seed_reproduces_losses_and_parameters_bitwise() {
        let (train_c, dev, labels, table) = fixture();
        for head in [HeadKind::Classifier, HeadKind::Instance] {
            let mut m1 = tiny_model(head, &labels, &train_c, 5);
            let mut m2 = tiny_model(head, &labels, &train_c, 5);
            let r1 = train(&mut m1, &cfg(head, 2, 9), &train_c, &dev, &table).unwrap();
            let r2 = train(&mut m2, &cfg(head, 2, 9), &train_c, &dev, &table).unwrap();
            let l1: Vec<f64> = r1.rows.iter().map(|r| r.train_loss).collect();
            let l2: Vec<f64> = r2.rows.iter().map(|r| r.train_loss).collect();
            assert_eq!(l1, l2);
            assert_eq!(param_bits(&m1), param_bits(&m2));
        }
    }

    #[test]
    fn different_seeds_draw_different_batches() {
        let (train_c, dev, labels, table) = fixture();
        let mut m1 = tiny_model(HeadKind::Classifier, &labels, &train_c, 5);
        let mut m2 = tiny_model(HeadKind::Classifier, &labels, &train_c, 5);
        let r1 = train(&mut m1, &cfg(HeadKind::Classifier, 2, 9), &train_c, &dev, &table).unwrap();
        let r2 = train(&mut m2, &cfg(HeadKind::Classifier, 2, 10), &train_c, &dev, &table).unwrap();
        assert_ne!(
            r1.rows[0].train_loss, r2.rows[0].train_loss,
            "different seeds should shuffle differently"
        );
    }

    #[test]
    fn loss_moves_downward_on_the_toy_corpus() {
        let (train_c, dev, labels, table) = fixture();
        for head in [HeadKind::Classifier, HeadKind::Instance] {
            let mut model = tiny_model(head, &labels, &train_c, 5);
            let mut c = cfg(head, 6, 9);
            c.dropout = 0.0;
            let report = train(&mut model, &c, &train_c, &dev, &table).unwrap();
            let first = report.rows.first().unwrap().train_loss;
            let last = report.rows.last().unwrap().train_loss;
            assert!(
                last < first,
                "{head:?}: loss went {first} -> {last}"
            );
        }
    }

    #[test]
    fn best_epoch_tracks_maximal_dev_f1() {
        let (train_c, dev, labels, table) = fixture();
        let mut model = tiny_model(HeadKind::Classifier, &labels, &train_c, 5);
        let report = train(
            &mut model,
            &cfg(HeadKind::Classifier, 4, 9),
            &train_c,
            &dev,
            &table,
        )
        .unwrap();
        let best = report.best_epoch.unwrap();
        let max = report
            .rows
            .iter()
            .map(|r| r.dev_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(report.rows[best].dev_f1, max);
        assert_eq!(report.best_dev_f1, max);
        // earliest epoch wins ties
        let earliest = report.rows.iter().find(|r| r.dev_f1 == max).unwrap().epoch;
        assert_eq!(best, earliest);
    }

    #[test]
    fn restored_parameters_reproduce_best_dev_f1() {
        let (train_c, dev, labels, table) = fixture();
        let mut model = tiny_model(HeadKind::Instance, &labels, &train_c, 5);
        let report = train(
            &mut model,
            &cfg(HeadKind::Instance, 3, 9),
            &train_c,
            &dev,
            &table,
        )
        .unwrap();
        let again = dev_metrics(&model, &train_c, &dev, 3, &table).unwrap();
        assert_eq!(again.f1, report.best_dev_f1);
    }

    #[test]
    fn no_word_embedding_parameter_exists_and_char_weights_move() {
        let (train_c, dev, labels, table) = fixture();
        let mut model = tiny_model(HeadKind::Classifier, &labels, &train_c, 5);
        for (_, p) in model.store.iter() {
            assert!(
                !p.name.contains("word"),
                "word embeddings must stay out of the parameter store"
            );
        }
        let conv_before = model
            .store
            .by_name("char_conv.w")
            .unwrap()
            .value
            .data()
            .to_vec();
        train(&mut model, &cfg(HeadKind::Classifier, 1, 9), &train_c, &dev, &table).unwrap();
        let conv_after = model.store.by_name("char_conv.w").unwrap().value.data();
        assert_ne!(conv_before, conv_after, "char CNN must keep training");
    }

    #[test]
    fn mismatched_span_width_is_a_config_error() {
        let (train_c, dev, labels, table) = fixture();
        let mut model = tiny_model(HeadKind::Classifier, &labels, &train_c, 5);
        let mut c = cfg(HeadKind::Classifier, 1, 9);
        c.max_span_width = 6;
        let err = train(&mut model, &c, &train_c, &dev, &table).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn mismatched_head_is_a_config_error() {
        let (train_c, dev, labels, table) = fixture();
        let mut model = tiny_model(HeadKind::Classifier, &labels, &train_c, 5);
        let err = train(&mut model, &cfg(HeadKind::Instance, 1, 9), &train_c, &dev, &table)
            .unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut c = TrainConfig::default();
        c.train_fraction = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn subsample_identity_at_fraction_one() {
        let (train_c, ..) = fixture();
        let out = subsample_training(&train_c, 1.0, 3);
        assert_eq!(out.sentences, train_c.sentences);
    }

    #[test]
    fn subsample_halves_exactly_and_preserves_gold() {
        let (train_c, ..) = fixture();
        let out = subsample_training(&train_c, 0.5, 3);
        assert_eq!(out.sentences.len(), 3);
        // ids renumbered to storage order, content verbatim
        for (i, s) in out.sentences.iter().enumerate() {
            assert_eq!(s.id, i);
            let original = train_c
                .sentences
                .iter()
                .find(|o| o.tokens == s.tokens)
                .unwrap();
            assert_eq!(s.gold_spans, original.gold_spans);
        }
        // deterministic
        let again = subsample_training(&train_c, 0.5, 3);
        assert_eq!(out.sentences, again.sentences);
    }

    #[test]
    fn report_serializes_as_one_line_per_epoch() {
        let (train_c, dev, labels, table) = fixture();
        let mut model = tiny_model(HeadKind::Classifier, &labels, &train_c, 5);
        let report = train(
            &mut model,
            &cfg(HeadKind::Classifier, 2, 9),
            &train_c,
            &dev,
            &table,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.jsonl");
        report.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3); // 2 epochs + summary
        let row: EpochRow = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(row.epoch, 0);
        let summary: serde_json::Value = serde_json::from_str(lines[2]).unwrap();
        assert_eq!(summary["best_epoch"], serde_json::json!(report.best_epoch));
    }
}
