//! Straight-line reference computations shared by the acceptance suite.
//!
//! Everything here is deliberately independent of the library's graph
//! machinery: parameters are copied out of the store into plain nested
//! vectors and pushed through hand-written f64 loops. When the library and
//! this module agree, two separate implementations agree — the check is
//! not circular.

#![allow(dead_code)] // each acceptance test uses its own slice of this module

use spanmatch::corpus::{
    CharVocab, EmbeddingTable, LabeledSpan, Sentence, Span, CHAR_PAD,
};
use spanmatch::encoder::SpanMode;
use spanmatch::model::Model;
use spanmatch::numcore::Tensor;

type Mat = Vec<Vec<f64>>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(m: &Mat, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn rows_of(t: &Tensor) -> Mat {
    (0..t.rows())
        .map(|r| (0..t.cols()).map(|c| t.at2(r, c)).collect())
        .collect()
}

pub struct RefDir {
    wx: Mat,
    uh: Mat,
    b: Vec<f64>,
}

/// A full copy of one model's parameters in plain nested vectors, plus the
/// handful of config numbers the forward pass needs.
pub struct RefNet {
    char_window: usize,
    hidden: usize,
    mode: SpanMode,
    char_emb: Mat,
    conv_w: Mat,
    conv_b: Vec<f64>,
    layers: Vec<(RefDir, RefDir)>,
    proj: Mat,
    cls: Option<Mat>,
}

impl RefNet {
    pub fn from_model(model: &Model) -> RefNet {
        let cfg = model.config();
        let value = |name: &str| -> &Tensor {
            &model
                .store
                .by_name(name)
                .unwrap_or_else(|| panic!("parameter `{name}` missing"))
                .value
        };
        let dir = |l: usize, d: &str| RefDir {
            wx: rows_of(value(&format!("lstm.l{l}.{d}.wx"))),
            uh: rows_of(value(&format!("lstm.l{l}.{d}.uh"))),
            b: value(&format!("lstm.l{l}.{d}.b")).data().to_vec(),
        };
        RefNet {
            char_window: cfg.char_window,
            hidden: cfg.lstm_hidden,
            mode: cfg.mode,
            char_emb: rows_of(value("char_emb")),
            conv_w: rows_of(value("char_conv.w")),
            conv_b: value("char_conv.b").data().to_vec(),
            layers: (0..cfg.lstm_layers)
                .map(|l| (dir(l, "fwd"), dir(l, "bwd")))
                .collect(),
            proj: rows_of(value("proj.w")),
            cls: model
                .store
                .by_name("cls.w")
                .map(|p| rows_of(&p.value)),
        }
    }

    /// Frozen word embedding, then one max-pooled linear filter response per
    /// char-CNN filter, computed over the padded character id sequence.
    fn token_vector(&self, token: &str, chars: &CharVocab, table: &EmbeddingTable) -> Vec<f64> {
        let mut out = table.lookup(token).to_vec();
        let left = (self.char_window - 1) / 2;
        let right = self.char_window - 1 - left;
        let mut ids = vec![CHAR_PAD; left];
        ids.extend(chars.encode(token));
        ids.extend(std::iter::repeat(CHAR_PAD).take(right));

        let positions = ids.len() + 1 - self.char_window;
        for (f, wrow) in self.conv_w.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for p in 0..positions {
                let mut s = self.conv_b[f];
                let mut wi = 0;
                for off in 0..self.char_window {
                    for &e in &self.char_emb[ids[p + off]] {
                        s += wrow[wi] * e;
                        wi += 1;
                    }
                }
                if s > best {
                    best = s;
                }
            }
            out.push(best);
        }
        out
    }

    /// One LSTM direction over pre-ordered inputs; fused gate block laid out
    /// input, forget, output, candidate.
    fn scan(&self, d: &RefDir, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h_dim = self.hidden;
        let mut h = vec![0.0; h_dim];
        let mut c = vec![0.0; h_dim];
        let mut states = Vec::with_capacity(xs.len());
        for x in xs {
            let zx = matvec(&d.wx, x);
            let zh = matvec(&d.uh, &h);
            let mut c_next = vec![0.0; h_dim];
            let mut h_next = vec![0.0; h_dim];
            for k in 0..h_dim {
                let z = |g: usize| zx[g * h_dim + k] + zh[g * h_dim + k] + d.b[g * h_dim + k];
                let i = sigmoid(z(0));
                let f = sigmoid(z(1));
                let o = sigmoid(z(2));
                let cand = z(3).tanh();
                c_next[k] = f * c[k] + i * cand;
                h_next[k] = o * c_next[k].tanh();
            }
            c = c_next;
            h = h_next;
            states.push(h.clone());
        }
        states
    }

    /// Top-layer (forward, backward) states, one per token.
    fn context_states(
        &self,
        sentence: &Sentence,
        chars: &CharVocab,
        table: &EmbeddingTable,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut x: Vec<Vec<f64>> = sentence
            .tokens
            .iter()
            .map(|t| self.token_vector(t, chars, table))
            .collect();
        let (mut fwd, mut bwd) = (Vec::new(), Vec::new());
        for (lf, lb) in &self.layers {
            fwd = self.scan(lf, &x);
            let rev: Vec<Vec<f64>> = x.iter().rev().cloned().collect();
            let mut back = self.scan(lb, &rev);
            back.reverse();
            bwd = back;
            x = fwd
                .iter()
                .zip(&bwd)
                .map(|(f, b)| {
                    let mut v = f.clone();
                    v.extend_from_slice(b);
                    v
                })
                .collect();
        }
        (fwd, bwd)
    }

    fn span_repr(&self, fwd: &[Vec<f64>], bwd: &[Vec<f64>], span: Span) -> Vec<f64> {
        let t_len = fwd.len();
        let zero = vec![0.0; self.hidden];
        let f_b = &fwd[span.b - 1];
        let f_before = if span.a >= 2 { &fwd[span.a - 2] } else { &zero };
        let b_a = &bwd[span.a - 1];
        let b_after = if span.b < t_len { &bwd[span.b] } else { &zero };

        let mut feat: Vec<f64> = f_b.iter().zip(f_before).map(|(x, y)| x - y).collect();
        feat.extend(b_a.iter().zip(b_after).map(|(x, y)| x - y));
        if self.mode == SpanMode::Nested {
            feat.extend(
                fwd[span.a - 1]
                    .iter()
                    .zip(&fwd[span.b - 1])
                    .map(|(x, y)| x + y),
            );
            feat.extend(
                bwd[span.a - 1]
                    .iter()
                    .zip(&bwd[span.b - 1])
                    .map(|(x, y)| x + y),
            );
        }
        matvec(&self.proj, &feat)
    }

    /// One span representation per requested span, full forward pass.
    pub fn encode_spans(
        &self,
        sentence: &Sentence,
        spans: &[Span],
        chars: &CharVocab,
        table: &EmbeddingTable,
    ) -> Vec<Vec<f64>> {
        let (fwd, bwd) = self.context_states(sentence, chars, table);
        spans
            .iter()
            .map(|&s| self.span_repr(&fwd, &bwd, s))
            .collect()
    }

    /// Classifier label distribution: score 0 for label 0, one dot product
    /// per remaining label, then a plain (unshifted) softmax.
    pub fn classifier_distribution(&self, h: &[f64]) -> Vec<f64> {
        let cls = self.cls.as_ref().expect("classifier weights present");
        let mut scores = vec![0.0];
        scores.extend(cls.iter().map(|w| dot(w, h)));
        let exps: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }
}

/// Instance-head label distribution the long way round: every pairwise
/// inner product, plain exp-normalization, then mass grouped by label.
pub fn instance_distribution(
    h_query: &[f64],
    support: &[(usize, Vec<f64>)],
    n_labels: usize,
) -> Vec<f64> {
    let exps: Vec<f64> = support
        .iter()
        .map(|(_, r)| dot(h_query, r).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    let mut dist = vec![0.0; n_labels];
    for ((label, _), e) in support.iter().zip(&exps) {
        dist[*label] += e / z;
    }
    dist
}

/// Gold label of a window by a linear scan of the sentence's gold list.
pub fn gold_label_of(sentence: &Sentence, span: Span, null_id: usize) -> usize {
    sentence
        .gold_spans
        .iter()
        .find(|g| g.span == span)
        .map(|g| g.label)
        .unwrap_or(null_id)
}

/// Cosine similarity with the same zero-vector convention as retrieval:
/// any zero-norm side yields 0.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let (mut d, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        d += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        d / (nu.sqrt() * nv.sqrt())
    }
}

/// Set-arithmetic span F1: per-sentence deduplicated exact matches, micro
/// percentages with the 0-when-undefined convention.
pub struct RefCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn ref_span_f1(
    gold: &[(usize, Vec<LabeledSpan>)],
    pred: &[(usize, Vec<LabeledSpan>)],
) -> RefCounts {
    let dedup = |spans: &[LabeledSpan]| -> Vec<LabeledSpan> {
        let mut v = spans.to_vec();
        v.sort();
        v.dedup();
        v
    };
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (sid, gspans) in gold {
        let g = dedup(gspans);
        let p = pred
            .iter()
            .find(|(pid, _)| pid == sid)
            .map(|(_, s)| dedup(s))
            .unwrap_or_default();
        tp += p.iter().filter(|x| g.contains(x)).count();
        fp += p.iter().filter(|x| !g.contains(x)).count();
        fn_ += g.iter().filter(|x| !p.contains(x)).count();
    }
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
    RefCounts {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
