//! Classification heads over span representations.
//!
//! The classifier head scores a span against one learned weight vector per
//! label, with the NULL score pinned to zero. The instance-based head scores
//! a span against every span in a support set of concrete training
//! instances: a softmax over inner products gives each support span a
//! neighbor probability (an NCA-style neighbor distribution), and summing
//! the probabilities of same-labeled neighbors gives the label distribution.
//! Both heads train by negative log-likelihood of gold labels over all
//! enumerated spans.
//!
//! Each head exists in two forms that must agree: a graph form used for
//! training (differentiable, batched) and a plain-`f64` form used at
//! prediction time.

pub mod support;

pub use support::{pool_from_sentences, sample_support, SupportItem, SupportPool, SupportSet};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{init_glorot, Graph, GraphParams, NodeId, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Classifier,
    Instance,
}

/// Weight vectors w_y for every non-NULL label, stored as the rows of a
/// [|Y|−1, d] matrix; row y−1 belongs to label id y.
#[derive(Debug)]
pub struct ClassifierHead {
    pub w: ParamId,
    pub n_labels: usize,
}

impl ClassifierHead {
    pub fn new(
        n_labels: usize,
        span_dim: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        debug_assert!(n_labels >= 2, "need at least NULL plus one label");
        let w = store.register("cls.w", init_glorot(&[n_labels - 1, span_dim], rng)?);
        Ok(ClassifierHead { w, n_labels })
    }

    pub fn from_store(n_labels: usize, store: &ParamStore) -> Result<Self> {
        let w = store
            .id_by_name("cls.w")
            .ok_or_else(|| Error::Checkpoint("missing parameter `cls.w`".into()))?;
        Ok(ClassifierHead { w, n_labels })
    }
}

// ---- plain (prediction-time) forms ---------------------------------------

/// score(s, y) = w_y·h_s for y ≠ NULL; score(s, NULL) = 0 exactly.
/// Output is indexed by label id (NULL first).
pub fn classifier_scores(h_s: &[f64], w: &Tensor) -> Result<Vec<f64>> {
    let (rows, d) = (w.rows(), w.cols());
    if h_s.len() != d {
        return Err(Error::ShapeMismatch {
            op: "classifier_scores",
            details: format!("span repr has {} dims, weights expect {}", h_s.len(), d),
        });
    }
    let mut scores = Vec::with_capacity(rows + 1);
    scores.push(0.0);
    for r in 0..rows {
        let mut dot = 0.0;
        for (wv, hv) in w.row(r).iter().zip(h_s) {
            dot += wv * hv;
        }
        scores.push(dot);
    }
    Ok(scores)
}

/// Softmax with the max subtracted first, so arbitrarily large scores stay
/// finite.
pub fn label_distribution_from_scores(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// P(s_j | s_i) ∝ exp(h_i·h_j) over the support set, log-sum-exp stabilized.
pub fn neighbor_probs(h_query: &[f64], support: &SupportSet) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let scores: Vec<f64> = support
        .reprs
        .iter()
        .map(|r| r.iter().zip(h_query).map(|(a, b)| a * b).sum())
        .collect();
    Ok(label_distribution_from_scores(&scores))
}

/// P(y | s_i) = Σ_{j : y_j = y} P(s_j | s_i). Labels absent from the support
/// receive probability 0.
pub fn marginal_label_probs(
    neighbor_probs: &[f64],
    support: &SupportSet,
    n_labels: usize,
) -> Vec<f64> {
    debug_assert_eq!(neighbor_probs.len(), support.len());
    let mut dist = vec![0.0; n_labels];
    for (p, item) in neighbor_probs.iter().zip(&support.items) {
        dist[item.label] += p;
    }
    dist
}

/// Argmax over the whole distribution, NULL included; exact ties go to the
/// smallest label id.
pub fn predict_label(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate().skip(1) {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

// ---- graph (training-time) forms -----------------------------------------

/// −Σ_i log softmax-P(gold_i) over the columns of `hq` ([d, M], one span per
/// column), with the NULL row fixed at score 0.
pub fn classifier_loss_graph(
    g: &mut Graph,
    pn: &mut GraphParams,
    store: &ParamStore,
    head: &ClassifierHead,
    hq: NodeId,
    gold: &[usize],
) -> Result<NodeId> {
    let m = g.value(hq).cols();
    debug_assert_eq!(gold.len(), m);
    let w = pn.node(g, store, head.w);
    let scores = g.matmul(w, hq)?; // [Y−1, M]
    let null_row = g.constant(Tensor::zeros(&[1, m]));
    let full = g.concat_rows(&[null_row, scores])?; // [Y, M]
    let lp = g.log_softmax(full, 0)?;
    let picked = g.gather(lp, 0, gold.to_vec())?;
    let neg = g.scale(picked, -1.0);
    Ok(g.sum(neg))
}

/// −Σ_i log max(P(gold_i | s_i), floor) where the label distribution comes
/// from neighbor probabilities of `hq` columns against `hs` columns.
pub fn nca_loss_graph(
    g: &mut Graph,
    hq: NodeId,
    hs: NodeId,
    support_labels: &[usize],
    gold: &[usize],
    n_labels: usize,
    floor: f64,
) -> Result<NodeId> {
    let m = g.value(hq).cols();
    let n = g.value(hs).cols();
    if n == 0 {
        return Err(Error::EmptySupport);
    }
    debug_assert_eq!(gold.len(), m);
    debug_assert_eq!(support_labels.len(), n);

    let scores = g.matmul_tn(hq, hs)?; // [M, N] inner products
    let p = g.softmax(scores, 1)?; // neighbor distribution per query
    let mut onehot = Tensor::zeros(&[n, n_labels]);
    for (j, &y) in support_labels.iter().enumerate() {
        onehot.data_mut()[j * n_labels + y] = 1.0;
    }
    let lmat = g.constant(onehot);
    let marg = g.matmul(p, lmat)?; // [M, Y] marginal label probabilities
    let picked = g.gather(marg, 1, gold.to_vec())?;
    let nl = g.neg_log_floor(picked, floor);
    Ok(g.sum(nl))
}
