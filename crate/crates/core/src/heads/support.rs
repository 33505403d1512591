//! Support-set selection for the instance-based head.
//!
//! A support set is a bag of concrete training spans a query is compared
//! against. During training it is drawn fresh per mini-batch by uniform
//! sentence sampling; at test time the trainer's sampling is replaced by
//! nearest-sentence retrieval (see `inference`). Either way the query's own
//! sentence never appears, preserving the leave-one-out character of the
//! training objective.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{enumerate_spans, Corpus, Span, Split};
use crate::error::{Error, Result};

/// One candidate span of a support sentence, with provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportItem {
    pub sentence_id: usize,
    pub span: Span,
    pub label: usize,
    pub split: Split,
}

/// Chosen support sentences plus every candidate span inside them, prior to
/// encoding. Sentence ids are ascending; items follow sentence order, then
/// span enumeration order.
#[derive(Debug, Clone)]
pub struct SupportPool {
    pub sentence_ids: Vec<usize>,
    pub items: Vec<SupportItem>,
}

/// A support pool with encoded span representations, one per item; the form
/// consumed by prediction and explanation.
#[derive(Debug, Clone)]
pub struct SupportSet {
    pub items: Vec<SupportItem>,
    pub reprs: Vec<Vec<f64>>,
}

impl SupportSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Collect every width-≤ `max_width` span of the given sentences as support
/// items, labels defaulting to NULL for unannotated windows.
pub fn pool_from_sentences(
    corpus: &Corpus,
    sentence_ids: &[usize],
    max_width: usize,
    null_id: usize,
) -> SupportPool {
    let mut items = Vec::new();
    for &sid in sentence_ids {
        let sentence = &corpus.sentences[sid];
        debug_assert_eq!(sentence.id, sid);
        for span in enumerate_spans(sentence, max_width) {
            items.push(SupportItem {
                sentence_id: sid,
                span,
                label: sentence.gold_label_of(span, null_id),
                split: corpus.split,
            });
        }
    }
    SupportPool {
        sentence_ids: sentence_ids.to_vec(),
        items,
    }
}

/// Uniformly sample min(K, eligible) sentences without replacement,
/// excluding the given sentence ids (normally the current mini-batch).
pub fn sample_support(
    corpus: &Corpus,
    k: usize,
    exclude: &[usize],
    max_width: usize,
    null_id: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SupportPool> {
    let mut eligible: Vec<usize> = (0..corpus.sentences.len())
        .filter(|i| !exclude.contains(i))
        .collect();
    if eligible.is_empty() {
        return Err(Error::EmptySupport);
    }
    let take = k.min(eligible.len());
    let (chosen, _) = eligible.partial_shuffle(rng, take);
    let mut chosen: Vec<usize> = chosen.to_vec();
    chosen.sort_unstable();
    Ok(pool_from_sentences(corpus, &chosen, max_width, null_id))
}
