//! Prediction-time machinery: cosine-kNN support retrieval, per-span label
//! distributions under either head, overlap decoding for flat span sets,
//! keep-everything decoding for nested ones, and neighbor-based
//! explanations that expose exactly the numbers behind a prediction.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    enumerate_spans, sentence_vector, Corpus, EmbeddingTable, LabeledSpan, Sentence, Span, Split,
};
use crate::error::{Error, Result};
use crate::heads::{
    classifier_scores, label_distribution_from_scores, marginal_label_probs, neighbor_probs,
    pool_from_sentences, predict_label, HeadKind, SupportSet,
};
use crate::model::Model;
use crate::numcore::{Graph, GraphParams};

/// One enumerated span with its full label distribution and argmax label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub sentence_id: usize,
    pub span: Span,
    /// Indexed by label id; sums to 1.
    pub distribution: Vec<f64>,
    pub label: usize,
}

impl Prediction {
    pub fn probability(&self) -> f64 {
        self.distribution[self.label]
    }
}

/// One ranked support neighbor inside an [`Explanation`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Neighbor {
    pub rank: usize,
    pub sentence_id: usize,
    pub span: Span,
    /// The neighbor span's surface text.
    pub text: String,
    /// The span rendered inside ±5 source-sentence tokens, the span itself
    /// bracketed.
    pub context: String,
    pub label: String,
    /// Raw inner product with the query representation.
    pub similarity: f64,
    /// Softmax neighbor probability; the same number that entered the
    /// prediction's label distribution.
    pub probability: f64,
    pub split: Split,
}

/// Why a span got its label: the ranked support neighbors behind the
/// instance head's distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Explanation {
    pub sentence_id: usize,
    pub span: Span,
    pub query_text: String,
    pub predicted_label: String,
    pub predicted_probability: f64,
    /// Full label distribution of the prediction, indexed by label id.
    pub distribution: Vec<f64>,
    /// Top-k neighbors by probability, descending.
    pub neighbors: Vec<Neighbor>,
}

// ---- support retrieval ----------------------------------------------------

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu.sqrt() * nv.sqrt())
    }
}

/// Ids of the K training sentences whose mean-embedding sentence vectors
/// are most cosine-similar to the query, best first; exact ties go to the
/// smaller sentence id.
pub fn knn_sentence_ids(
    query: &Sentence,
    train: &Corpus,
    k: usize,
    table: &EmbeddingTable,
) -> Vec<usize> {
    let qv = sentence_vector(query, table);
    let mut scored: Vec<(f64, usize)> = train
        .sentences
        .iter()
        .map(|s| (cosine(&qv, &sentence_vector(s, table)), s.id))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored.into_iter().map(|(_, id)| id).collect()
}

/// Encode the given spans of one sentence in evaluation mode (no dropout)
/// and return one plain vector per span.
pub fn encode_spans_eval(
    model: &Model,
    sentence: &Sentence,
    spans: &[Span],
    table: &EmbeddingTable,
) -> Result<Vec<Vec<f64>>> {
    if spans.is_empty() {
        return Ok(Vec::new());
    }
    let mut g = Graph::new_eval();
    let mut pn = GraphParams::new();
    let hq = model.encoder.encode_sentence_spans(
        &mut g,
        &mut pn,
        &model.store,
        sentence,
        spans,
        &model.chars,
        table,
        0.0,
    )?;
    let t = g.value(hq);
    let (d, n) = (t.rows(), t.cols());
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut col = Vec::with_capacity(d);
        for i in 0..d {
            col.push(t.at2(i, j));
        }
        out.push(col);
    }
    Ok(out)
}

/// The K nearest training sentences by sentence-vector cosine, expanded to
/// every candidate span and encoded with the current parameters.
pub fn retrieve_support_knn(
    model: &Model,
    query: &Sentence,
    train: &Corpus,
    k: usize,
    table: &EmbeddingTable,
) -> Result<SupportSet> {
    let ids = knn_sentence_ids(query, train, k, table);
    build_support(model, train, &ids, table)
}

/// Encode all candidate spans of the given training sentences into a
/// [`SupportSet`], in the order the ids are given.
pub fn build_support(
    model: &Model,
    train: &Corpus,
    sentence_ids: &[usize],
    table: &EmbeddingTable,
) -> Result<SupportSet> {
    let max_width = model.config().max_span_width;
    let null_id = model.labels.null_id();
    let mut items = Vec::new();
    let mut reprs = Vec::new();
    for &sid in sentence_ids {
        let pool = pool_from_sentences(train, &[sid], max_width, null_id);
        let spans: Vec<Span> = pool.items.iter().map(|it| it.span).collect();
        let encoded = encode_spans_eval(model, &train.sentences[sid], &spans, table)?;
        items.extend(pool.items);
        reprs.extend(encoded);
    }
    Ok(SupportSet { items, reprs })
}

// ---- prediction -----------------------------------------------------------

/// Label distribution for one already-encoded span under the model's head.
pub fn span_distribution(
    model: &Model,
    h_span: &[f64],
    support: Option<&SupportSet>,
) -> Result<Vec<f64>> {
    match model.head {
        HeadKind::Classifier => {
            let head = model
                .classifier
                .as_ref()
                .expect("classifier head present by construction");
            let w = &model.store.get(head.w).value;
            let scores = classifier_scores(h_span, w)?;
            Ok(label_distribution_from_scores(&scores))
        }
        HeadKind::Instance => {
            let support = support.ok_or(Error::EmptySupport)?;
            let p = neighbor_probs(h_span, support)?;
            Ok(marginal_label_probs(&p, support, model.labels.len()))
        }
    }
}

/// One prediction per enumerated span of the sentence. `support` is
/// required for the instance head and ignored by the classifier head.
pub fn predict_sentence(
    model: &Model,
    sentence: &Sentence,
    support: Option<&SupportSet>,
    table: &EmbeddingTable,
) -> Result<Vec<Prediction>> {
    let spans = enumerate_spans(sentence, model.config().max_span_width);
    let encoded = encode_spans_eval(model, sentence, &spans, table)?;
    let mut out = Vec::with_capacity(spans.len());
    for (span, h) in spans.into_iter().zip(&encoded) {
        let distribution = span_distribution(model, h, support)?;
        let label = predict_label(&distribution);
        out.push(Prediction {
            sentence_id: sentence.id,
            span,
            distribution,
            label,
        });
    }
    Ok(out)
}

/// Predict every sentence of a corpus. For the instance head, each query
/// sentence retrieves its own K nearest training sentences; per-sentence
/// support encodings are cached so no training sentence is encoded twice.
pub fn predict_corpus(
    model: &Model,
    queries: &Corpus,
    train: &Corpus,
    k: usize,
    table: &EmbeddingTable,
) -> Result<Vec<Vec<Prediction>>> {
    let mut cache: HashMap<usize, SupportSet> = HashMap::new();
    let mut out = Vec::with_capacity(queries.sentences.len());
    for sentence in &queries.sentences {
        let support = match model.head {
            HeadKind::Classifier => None,
            HeadKind::Instance => {
                let ids = knn_sentence_ids(sentence, train, k, table);
                let mut items = Vec::new();
                let mut reprs = Vec::new();
                for id in ids {
                    if !cache.contains_key(&id) {
                        let chunk = build_support(model, train, &[id], table)?;
                        cache.insert(id, chunk);
                    }
                    let chunk = &cache[&id];
                    items.extend(chunk.items.iter().cloned());
                    reprs.extend(chunk.reprs.iter().cloned());
                }
                Some(SupportSet { items, reprs })
            }
        };
        out.push(predict_sentence(model, sentence, support.as_ref(), table)?);
    }
    Ok(out)
}

// ---- decoding -------------------------------------------------------------

/// Keep non-NULL predictions, order by argmax probability descending
/// (ties: position, then label id), and greedily accept spans that overlap
/// nothing already accepted. The result is pairwise non-overlapping.
pub fn decode_flat(predictions: &[Prediction], null_id: usize) -> Vec<LabeledSpan> {
    let mut candidates: Vec<&Prediction> =
        predictions.iter().filter(|p| p.label != null_id).collect();
    candidates.sort_by(|x, y| {
        y.probability()
            .partial_cmp(&x.probability())
            .unwrap()
            .then(x.span.a.cmp(&y.span.a))
            .then(x.span.b.cmp(&y.span.b))
            .then(x.label.cmp(&y.label))
    });
    let mut kept: Vec<LabeledSpan> = Vec::new();
    for c in candidates {
        let overlaps = kept
            .iter()
            .any(|k| c.span.a <= k.span.b && k.span.a <= c.span.b);
        if !overlaps {
            kept.push(LabeledSpan {
                span: c.span,
                label: c.label,
            });
        }
    }
    kept.sort_by_key(|s| (s.span.a, s.span.b));
    kept
}

/// Keep every non-NULL argmax span; nesting and crossing both allowed.
pub fn decode_nested(predictions: &[Prediction], null_id: usize) -> Vec<LabeledSpan> {
    predictions
        .iter()
        .filter(|p| p.label != null_id)
        .map(|p| LabeledSpan {
            span: p.span,
            label: p.label,
        })
        .collect()
}

/// Decode according to the encoder's span mode: flat mode resolves
/// overlaps, nested mode keeps everything.
pub fn decode(model: &Model, predictions: &[Prediction]) -> Vec<LabeledSpan> {
    let null_id = model.labels.null_id();
    match model.config().mode {
        crate::encoder::SpanMode::Flat => decode_flat(predictions, null_id),
        crate::encoder::SpanMode::Nested => decode_nested(predictions, null_id),
    }
}

// ---- explanation ----------------------------------------------------------

fn span_text(sentence: &Sentence, span: Span) -> String {
    sentence.tokens[span.a - 1..span.b].join(" ")
}

/// Render `span` inside its sentence with up to `margin` tokens of context
/// on each side, the span itself in brackets.
fn context_window(sentence: &Sentence, span: Span, margin: usize) -> String {
    let from = span.a.saturating_sub(margin).max(1);
    let to = (span.b + margin).min(sentence.len());
    let mut parts = Vec::new();
    if from > 1 {
        parts.push("…".to_string());
    }
    for t in from..=to {
        let tok = &sentence.tokens[t - 1];
        if t == span.a && t == span.b {
            parts.push(format!("[{tok}]"));
        } else if t == span.a {
            parts.push(format!("[{tok}"));
        } else if t == span.b {
            parts.push(format!("{tok}]"));
        } else {
            parts.push(tok.clone());
        }
    }
    if to < sentence.len() {
        parts.push("…".to_string());
    }
    parts.join(" ")
}

/// Rank the support set for one query span and package the top-k neighbors
/// with the numbers that produced the prediction. `train` supplies neighbor
/// sentence text for context rendering.
pub fn explain(
    model: &Model,
    sentence: &Sentence,
    span: Span,
    support: &SupportSet,
    train: &Corpus,
    top_k: usize,
    table: &EmbeddingTable,
) -> Result<Explanation> {
    if span.b > sentence.len() {
        return Err(Error::SpanOutOfRange {
            a: span.a,
            b: span.b,
            len: sentence.len(),
        });
    }
    let encoded = encode_spans_eval(model, sentence, &[span], table)?;
    let h = &encoded[0];
    let probs = neighbor_probs(h, support)?;
    let distribution = marginal_label_probs(&probs, support, model.labels.len());
    let predicted = predict_label(&distribution);

    let mut order: Vec<usize> = (0..support.len()).collect();
    order.sort_by(|&i, &j| {
        probs[j]
            .partial_cmp(&probs[i])
            .unwrap()
            .then(support.items[i].sentence_id.cmp(&support.items[j].sentence_id))
            .then(support.items[i].span.a.cmp(&support.items[j].span.a))
            .then(support.items[i].span.b.cmp(&support.items[j].span.b))
    });
    order.truncate(top_k);

    let neighbors = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let item = &support.items[i];
            let source = &train.sentences[item.sentence_id];
            let similarity = support.reprs[i].iter().zip(h).map(|(a, b)| a * b).sum();
            Neighbor {
                rank: rank + 1,
                sentence_id: item.sentence_id,
                span: item.span,
                text: span_text(source, item.span),
                context: context_window(source, item.span, 5),
                label: model.labels.name(item.label).to_string(),
                similarity,
                probability: probs[i],
                split: item.split,
            }
        })
        .collect();

    Ok(Explanation {
        sentence_id: sentence.id,
        span,
        query_text: span_text(sentence, span),
        predicted_label: model.labels.name(predicted).to_string(),
        predicted_probability: distribution[predicted],
        distribution,
        neighbors,
    })
}

impl Explanation {
    /// Stable human-readable rendering, one neighbor per line.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "query: \"{}\" (sentence {}, span {}..{})",
            self.query_text, self.sentence_id, self.span.a, self.span.b
        );
        let _ = writeln!(
            s,
            "predicted: {} (p = {:.4})",
            self.predicted_label, self.predicted_probability
        );
        let _ = writeln!(s, "neighbors:");
        for n in &self.neighbors {
            let _ = writeln!(
                s,
                "  {:>2}. [{}] \"{}\"  sim {:+.4}  p {:.4}  (sentence {}: {})",
                n.rank, n.label, n.text, n.similarity, n.probability, n.sentence_id, n.context
            );
        }
        s
    }
}

// ---- artifact I/O ---------------------------------------------------------

/// One decoded span as written to a predictions file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PredictionRecord {
    pub sentence_id: usize,
    pub a: usize,
    pub b: usize,
    pub label: String,
    pub probability: f64,
}

/// Write decoded predictions as line-delimited JSON, one span per line.
pub fn write_predictions(
    path: &Path,
    model: &Model,
    decoded: &[(usize, Vec<LabeledSpan>, Vec<Prediction>)],
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for (sid, spans, preds) in decoded {
        for ls in spans {
            let probability = preds
                .iter()
                .find(|p| p.span == ls.span && p.label == ls.label)
                .map(|p| p.probability())
                .unwrap_or(f64::NAN);
            let rec = PredictionRecord {
                sentence_id: *sid,
                a: ls.span.a,
                b: ls.span.b,
                label: model.labels.name(ls.label).to_string(),
                probability,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a predictions file back into per-sentence labeled spans, label ids
/// resolved against (and extending) `labels`.
pub fn read_predictions(
    path: &Path,
    labels: &mut crate::corpus::LabelSet,
) -> Result<Vec<(usize, Vec<LabeledSpan>)>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut by_sentence: Vec<(usize, Vec<LabeledSpan>)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.display().to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        let label = labels.get_or_insert(&rec.label);
        let entry = match by_sentence.iter_mut().find(|(sid, _)| *sid == rec.sentence_id) {
            Some(e) => e,
            None => {
                by_sentence.push((rec.sentence_id, Vec::new()));
                by_sentence.last_mut().unwrap()
            }
        };
        entry.1.push(LabeledSpan {
            span: Span::new(rec.a, rec.b),
            label,
        });
    }
    Ok(by_sentence)
}

/// One gold span's representation as written by [`dump_features`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub sentence_id: usize,
    pub a: usize,
    pub b: usize,
    pub label: String,
    pub values: Vec<f64>,
}

/// Dump the span representation h_s of every gold span, one JSON line per
/// span, for external visualization.
pub fn dump_features(model: &Model, corpus: &Corpus, table: &EmbeddingTable, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for sentence in &corpus.sentences {
        if sentence.gold_spans.is_empty() {
            continue;
        }
        let spans: Vec<Span> = sentence.gold_spans.iter().map(|g| g.span).collect();
        let encoded = encode_spans_eval(model, sentence, &spans, table)?;
        for (gold, values) in sentence.gold_spans.iter().zip(encoded) {
            let rec = FeatureRecord {
                sentence_id: sentence.id,
                a: gold.span.a,
                b: gold.span.b,
                label: model.labels.name(gold.label).to_string(),
                values,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}
