//! Corpus ingestion and span bookkeeping.
//!
//! Sentences hold 1-based inclusive word-index spans. Candidate spans for
//! classification are every (a, b) window up to a width cap; gold spans not
//! produced by enumeration (wider than the cap) simply count against recall.

pub mod bio;
pub mod embeddings;
pub mod nested;

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};

pub use bio::{detect_scheme, parse_bio, spans_from_tags, tags_from_spans, write_bio, Scheme, Tag};
pub use embeddings::{load_embeddings, sentence_vector, EmbeddingTable};
pub use nested::{parse_nested, write_nested};

/// Word-index window, 1-based and inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub a: usize,
    pub b: usize,
}

impl Span {
    pub fn new(a: usize, b: usize) -> Self {
        debug_assert!(a >= 1 && a <= b);
        Span { a, b }
    }

    pub fn width(&self) -> usize {
        self.b - self.a + 1
    }

    /// True when `self` lies strictly inside `outer` (contained, not equal).
    pub fn strictly_inside(&self, outer: &Span) -> bool {
        outer.a <= self.a && self.b <= outer.b && (outer.a < self.a || self.b < outer.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub span: Span,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    /// Unique within its corpus; used for support-exclusion bookkeeping.
    pub id: usize,
    pub tokens: Vec<String>,
    /// Gold spans with label ids; (a, b) pairs are unique per sentence.
    pub gold_spans: Vec<LabeledSpan>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold label for (a, b), or `null_id` when the window is not annotated.
    pub fn gold_label_of(&self, span: Span, null_id: usize) -> usize {
        self.gold_spans
            .iter()
            .find(|ls| ls.span == span)
            .map(|ls| ls.label)
            .unwrap_or(null_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub split: Split,
}

impl Corpus {
    pub fn new(split: Split) -> Self {
        Corpus {
            sentences: Vec::new(),
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Dense label ids with NULL pinned to id 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

pub const NULL_LABEL: &str = "NULL";

impl LabelSet {
    pub fn new() -> Self {
        LabelSet {
            names: vec![NULL_LABEL.to_string()],
        }
    }

    pub fn null_id(&self) -> usize {
        0
    }

    /// Id of `name`, inserting it at the end when unseen. Ids never move.
    pub fn get_or_insert(&mut self, name: &str) -> usize {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return i;
        }
        self.names.push(name.to_string());
        self.names.len() - 1
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Character inventory taken from the training split only. Id 0 pads
/// convolution windows, id 1 covers characters unseen in training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
}

pub const CHAR_PAD: usize = 0;
pub const CHAR_UNK: usize = 1;

impl CharVocab {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let set: BTreeSet<char> = corpus
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter())
            .flat_map(|t| t.chars())
            .collect();
        CharVocab {
            chars: set.into_iter().collect(),
        }
    }

    /// Number of ids, including the pad and unk slots.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        match self.chars.binary_search(&c) {
            Ok(i) => i + 2,
            Err(_) => CHAR_UNK,
        }
    }

    pub fn encode(&self, token: &str) -> Vec<usize> {
        token.chars().map(|c| self.id(c)).collect()
    }
}

/// All candidate windows of width ≤ `max_width`, in lexicographic (a, b)
/// order.
pub fn enumerate_spans(sentence: &Sentence, max_width: usize) -> Vec<Span> {
    debug_assert!(max_width >= 1);
    let t = sentence.len();
    let mut out = Vec::new();
    for a in 1..=t {
        for b in a..=(a + max_width - 1).min(t) {
            out.push(Span::new(a, b));
        }
    }
    out
}

/// Validate a parsed gold-span list against sentence length and the
/// one-label-per-window rule. Shared by both parsers.
pub(crate) fn validate_gold_spans(
    spans: &[LabeledSpan],
    len: usize,
    labels: &LabelSet,
) -> Result<()> {
    for (i, ls) in spans.iter().enumerate() {
        if ls.span.a < 1 || ls.span.b > len || ls.span.a > ls.span.b {
            return Err(Error::SpanOutOfRange {
                a: ls.span.a,
                b: ls.span.b,
                len,
            });
        }
        if spans[..i].iter().any(|prev| prev.span == ls.span) {
            return Err(Error::DuplicateSpan {
                a: ls.span.a,
                b: ls.span.b,
                label: labels.name(ls.label).to_string(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(tokens: &[&str]) -> Sentence {
        Sentence {
            id: 0,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            gold_spans: vec![],
        }
    }

    #[test]
    fn label_set_pins_null_to_zero() {
        let mut ls = LabelSet::new();
        assert_eq!(ls.null_id(), 0);
        assert_eq!(ls.name(0), "NULL");
        let per = ls.get_or_insert("PER");
        let org = ls.get_or_insert("ORG");
        assert_eq!((per, org), (1, 2));
        assert_eq!(ls.get_or_insert("PER"), 1);
        assert_eq!(ls.id("ORG"), Some(2));
        assert_eq!(ls.len(), 3);
    }

    #[test]
    fn enumerate_matches_worked_example() {
        // T=5 with a wide cap: all 15 windows.
        let s = sent(&["a", "b", "c", "d", "e"]);
        let spans = enumerate_spans(&s, 6);
        assert_eq!(spans.len(), 15);
        assert_eq!(spans.first(), Some(&Span::new(1, 1)));
        assert_eq!(spans[1], Span::new(1, 2));
        assert_eq!(spans[spans.len() - 2], Span::new(4, 5));
        assert_eq!(spans.last(), Some(&Span::new(5, 5)));
    }

    #[test]
    fn enumerate_respects_width_cap() {
        let s = sent(&["a", "b", "c"]);
        let spans = enumerate_spans(&s, 2);
        let expect = [(1, 1), (1, 2), (2, 2), (2, 3), (3, 3)];
        assert_eq!(
            spans,
            expect.map(|(a, b)| Span::new(a, b)).to_vec()
        );
    }

    #[test]
    fn enumerate_count_matches_closed_form_and_brute_force() {
        for t in 1..=32usize {
            let s = sent(&vec!["x"; t]);
            for l in 1..=32usize {
                let got = enumerate_spans(&s, l).len();
                // brute force over all pairs
                let mut brute = 0;
                for a in 1..=t {
                    for b in a..=t {
                        if b - a < l {
                            brute += 1;
                        }
                    }
                }
                assert_eq!(got, brute, "T={t} L={l}");
                if t >= l {
                    assert_eq!(got, t * l - l * (l - 1) / 2, "closed form T={t} L={l}");
                }
            }
        }
    }

    #[test]
    fn enumeration_is_lexicographic() {
        let s = sent(&vec!["x"; 9]);
        let spans = enumerate_spans(&s, 4);
        let mut sorted = spans.clone();
        sorted.sort();
        assert_eq!(spans, sorted);
    }

    #[test]
    fn char_vocab_is_sorted_and_train_only() {
        let mut c = Corpus::new(Split::Train);
        c.sentences.push(sent(&["ab", "ba"]));
        let v = CharVocab::from_corpus(&c);
        assert_eq!(v.len(), 4); // pad, unk, 'a', 'b'
        assert_eq!(v.id('a'), 2);
        assert_eq!(v.id('b'), 3);
        assert_eq!(v.id('z'), CHAR_UNK);
        assert_eq!(v.encode("abz"), vec![2, 3, CHAR_UNK]);
    }

    #[test]
    fn gold_label_lookup_defaults_to_null() {
        let mut s = sent(&["a", "b"]);
        s.gold_spans.push(LabeledSpan {
            span: Span::new(1, 2),
            label: 3,
        });
        assert_eq!(s.gold_label_of(Span::new(1, 2), 0), 3);
        assert_eq!(s.gold_label_of(Span::new(1, 1), 0), 0);
    }

    #[test]
    fn strictly_inside_excludes_equality() {
        let outer = Span::new(2, 5);
        assert!(Span::new(3, 5).strictly_inside(&outer));
        assert!(Span::new(2, 4).strictly_inside(&outer));
        assert!(!Span::new(2, 5).strictly_inside(&outer));
        assert!(!Span::new(1, 5).strictly_inside(&outer));
    }
}
