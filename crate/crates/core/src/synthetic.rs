//! Deterministic synthetic corpora for hermetic end-to-end tests and the
//! bundled `gen-synthetic` command.
//!
//! Sentences are drawn from slot templates over three entity inventories.
//! PER and ORG are two-token names assembled by randomly pairing words
//! from per-class pools that share contexts and embedding clusters, so a
//! name's type is a lexical fact about its words — learnable from
//! word-identity (embedding jitter, character content) but never from the
//! surrounding template. LOC names are single tokens with their own
//! cluster and a "-ville"/"-burg" character signature, and the newspaper
//! template ("the haleville herald …") makes a LOC word open an ORG span.
//! The pools are large enough that shrinking the training set leaves name
//! words unseen, so accuracy degrades as training data shrinks. The nested
//! variant embeds a LOC inside a longer ORG construction ("bank of
//! haleville"). Word embeddings are generated alongside: each pool gets a
//! cluster center, each word a noisy copy, making sentence-vector
//! retrieval meaningful.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_bio, write_nested, Corpus, EmbeddingTable, LabelSet, LabeledSpan, Sentence, Span, Split,
};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Flat,
    Nested,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kind: SynthKind::Flat,
            n_train: 200,
            n_dev: 50,
            n_test: 50,
            embedding_dim: 24,
            seed: 13,
        }
    }
}

/// Generated corpora plus the matching label inventory and embeddings.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    pub labels: LabelSet,
    pub table: EmbeddingTable,
}

// Name inventories. Both entity-name classes are two tokens long (span
// width is a deterministic function of class, which keeps sub-span labels
// consistent: an opening name token standing alone is always NULL), and a
// mention pairs a random opener with a random second token, so surface
// forms are long-tailed: a full-size training set covers nearly all name
// words while a small fraction of it leaves many unseen. Person and
// organization names share contexts and embedding geometry — like
// family-firm names in real text, the entity type of a name is a lexical
// fact about its words, not something its surroundings reveal.
const PER_FIRST: &[&str] = &[
    "milda", "joren", "kasper", "ane", "tilde", "rollo", "petra", "vigo", "selma", "oskar",
    "brina", "talvo", "edda", "soren", "runa", "halvar",
];
const PER_LAST: &[&str] = &[
    "voss", "lindt", "marek", "holt", "brandt", "eik", "falk", "sorel", "dreyer", "nyland",
    "kessel", "orvik", "sandun", "molvar", "trygg", "ebben",
];
const ORG_FIRST: &[&str] = &[
    "zenix", "uvatek", "koralo", "brimstad", "quollm", "fentrix", "dalvo", "merkat", "ostrel",
    "vandik", "grelho", "simber", "torvald", "nexna", "kolbri", "ravnel",
];
const ORG_LAST: &[&str] = &[
    "arveld", "bastion", "cormund", "drenlo", "elvstad", "fornek", "gollim", "hestvik",
    "immard", "jorvand", "krillo", "lomvard", "morsten", "nubrek", "ovland", "prennik",
];
const LOC_NAMES: &[&str] = &[
    "haleville", "crowburg", "dunville", "astburg", "felville", "norburg", "smeltville",
    "varburg",
];
const FILLER_NOUNS: &[&str] = &[
    "report", "meeting", "deal", "plan", "survey", "budget", "market",
];
const TIME_WORDS: &[&str] = &["yesterday", "today", "recently", "tonight"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

struct Builder {
    tokens: Vec<String>,
    gold: Vec<LabeledSpan>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            tokens: Vec::new(),
            gold: Vec::new(),
        }
    }

    fn word(&mut self, w: &str) {
        self.tokens.push(w.to_string());
    }

    fn entity(&mut self, words: &[&str], label: usize) {
        let a = self.tokens.len() + 1;
        for w in words {
            self.tokens.push(w.to_string());
        }
        let b = self.tokens.len();
        self.gold.push(LabeledSpan {
            span: Span::new(a, b),
            label,
        });
    }

    /// Entity spanning `outer` with a second gold label over the sub-range
    /// `inner` (0-based, inclusive) of those words.
    fn nested_entity(
        &mut self,
        words: &[&str],
        outer_label: usize,
        inner: (usize, usize),
        inner_label: usize,
    ) {
        let a = self.tokens.len() + 1;
        for w in words {
            self.tokens.push(w.to_string());
        }
        let b = self.tokens.len();
        self.gold.push(LabeledSpan {
            span: Span::new(a, b),
            label: outer_label,
        });
        self.gold.push(LabeledSpan {
            span: Span::new(a + inner.0, a + inner.1),
            label: inner_label,
        });
    }
}

struct Inventories {
    per: usize,
    org: usize,
    loc: usize,
}

fn person(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    vec![pick(rng, PER_FIRST), pick(rng, PER_LAST)]
}

fn organization(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    vec![pick(rng, ORG_FIRST), pick(rng, ORG_LAST)]
}

fn location(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    vec![pick(rng, LOC_NAMES)]
}

/// A two-token name mention of either entity type. Name slots accept both
/// types everywhere, so context never discloses PER vs ORG.
fn name_mention(rng: &mut ChaCha8Rng, inv: &Inventories) -> (Vec<&'static str>, usize) {
    if rng.gen_bool(0.5) {
        (person(rng), inv.per)
    } else {
        (organization(rng), inv.org)
    }
}

/// One flat sentence from a handful of templates. Location slots are
/// type-revealing; name slots are not.
fn flat_sentence(rng: &mut ChaCha8Rng, inv: &Inventories) -> Builder {
    let mut b = Builder::new();
    let name = |b: &mut Builder, rng: &mut ChaCha8Rng| {
        let (tokens, label) = name_mention(rng, inv);
        b.entity(&tokens, label);
    };
    match rng.gen_range(0..7) {
        0 => {
            // "milda voss visited haleville yesterday"
            name(&mut b, rng);
            b.word("visited");
            b.entity(&location(rng), inv.loc);
            b.word(pick(rng, TIME_WORDS));
        }
        1 => {
            // "zenix arveld hired kasper holt after the meeting"
            name(&mut b, rng);
            b.word("hired");
            name(&mut b, rng);
            b.word("after");
            b.word("the");
            b.word(pick(rng, FILLER_NOUNS));
        }
        2 => {
            // "the budget from uvatek fornek worried petra falk"
            b.word("the");
            b.word(pick(rng, FILLER_NOUNS));
            b.word("from");
            name(&mut b, rng);
            b.word("worried");
            name(&mut b, rng);
        }
        3 => {
            // "crowburg approved the plan recently"
            b.entity(&location(rng), inv.loc);
            b.word("approved");
            b.word("the");
            b.word(pick(rng, FILLER_NOUNS));
            b.word(pick(rng, TIME_WORDS));
        }
        4 => {
            // "joren lindt joined koralo krillo in dunville"
            name(&mut b, rng);
            b.word("joined");
            name(&mut b, rng);
            b.word("in");
            b.entity(&location(rng), inv.loc);
        }
        5 => {
            // "tilde brandt met ane holt in astburg today"
            name(&mut b, rng);
            b.word("met");
            name(&mut b, rng);
            b.word("in");
            b.entity(&location(rng), inv.loc);
            b.word(pick(rng, TIME_WORDS));
        }
        _ => {
            // "the haleville herald praised ane holt today" — newspaper
            // metonymy: a location word opens an organization span, so the
            // label of the location word depends on the following token
            b.word("the");
            b.entity(&[pick(rng, LOC_NAMES), "herald"], inv.org);
            b.word("praised");
            name(&mut b, rng);
            b.word(pick(rng, TIME_WORDS));
        }
    }
    b
}

/// One nested sentence: an ORG construction with a LOC strictly inside
/// ("bank of haleville", "crowburg herald"), plus flat context entities.
fn nested_sentence(rng: &mut ChaCha8Rng, inv: &Inventories) -> Builder {
    let mut b = Builder::new();
    let institution = ["bank", "university", "museum"][rng.gen_range(0..3)];
    let loc = pick(rng, LOC_NAMES);
    match rng.gen_range(0..3) {
        0 => {
            // "the bank of haleville hired milda" — ORG spans 3 words,
            // LOC nested at the last one
            b.word("the");
            b.nested_entity(&[institution, "of", loc], inv.org, (2, 2), inv.loc);
            b.word("hired");
            b.entity(&person(rng), inv.per);
        }
        1 => {
            // "kasper joined the museum of crowburg yesterday"
            b.entity(&person(rng), inv.per);
            b.word("joined");
            b.word("the");
            b.nested_entity(&[institution, "of", loc], inv.org, (2, 2), inv.loc);
            b.word(pick(rng, TIME_WORDS));
        }
        _ => {
            // "the dunville herald praised the plan" — ORG "dunville
            // herald" with LOC nested at its first word
            b.word("the");
            b.nested_entity(&[loc, "herald"], inv.org, (0, 0), inv.loc);
            b.word("praised");
            b.word("the");
            b.word(pick(rng, FILLER_NOUNS));
        }
    }
    b
}

fn make_corpus(
    rng: &mut ChaCha8Rng,
    inv: &Inventories,
    kind: SynthKind,
    n: usize,
    split: Split,
) -> Corpus {
    let sentences = (0..n)
        .map(|id| {
            let b = match kind {
                SynthKind::Flat => flat_sentence(rng, inv),
                SynthKind::Nested => {
                    // nested constructions in ~2/3 of sentences; the rest
                    // are flat so NULL context stays dominant
                    if rng.gen_bool(2.0 / 3.0) {
                        nested_sentence(rng, inv)
                    } else {
                        flat_sentence(rng, inv)
                    }
                }
            };
            let mut gold = b.gold;
            gold.sort_by_key(|g| (g.span.a, g.span.b));
            Sentence {
                id,
                tokens: b.tokens,
                gold_spans: gold,
            }
        })
        .collect();
    Corpus { sentences, split }
}

/// Every word the generator can emit.
fn vocabulary() -> Vec<(&'static str, usize)> {
    // (word, cluster id) — clusters drive embedding geometry. Opening and
    // second name tokens get distinct clusters, which keeps the encoder
    // state change at an entity boundary large enough to locate the
    // boundary reliably; person and organization words deliberately share
    // those clusters, so the entity type is carried by per-word jitter
    // and character content, never by the cluster center.
    let mut v = Vec::new();
    for w in PER_FIRST.iter().chain(ORG_FIRST) {
        v.push((*w, 0));
    }
    for w in PER_LAST.iter().chain(ORG_LAST) {
        v.push((*w, 5));
    }
    for w in LOC_NAMES {
        v.push((*w, 2));
    }
    for w in FILLER_NOUNS {
        v.push((*w, 3));
    }
    for w in TIME_WORDS {
        v.push((*w, 3));
    }
    // "herald" patterns like an organization suffix ("X herald" is a
    // newspaper) even though it also follows location words
    v.push(("herald", 6));
    for w in [
        "visited", "hired", "worried", "approved", "met", "joined", "praised",
        "bank", "university", "museum", "the", "from", "after", "in", "of",
    ] {
        v.push((w, 4));
    }
    v
}

fn make_embeddings(dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e41b);
    let mut centers: Vec<Vec<f64>> = Vec::new();
    for _ in 0..7 {
        centers.push((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    let mut table = EmbeddingTable::new(dim);
    for (word, cluster) in vocabulary() {
        // tight clusters with per-word jitter: word identity stays
        // recoverable, class geometry stays nearly linearly separable
        let vector = centers[cluster]
            .iter()
            .map(|c| 0.9 * c + rng.gen_range(-0.25..0.25))
            .collect();
        table.insert(word, vector);
    }
    table
}

/// Generate train/dev/test corpora, labels, and embeddings, all
/// deterministic in the config seed.
pub fn generate(cfg: &SynthConfig) -> SynthData {
    let mut labels = LabelSet::new();
    let inv = Inventories {
        per: labels.get_or_insert("PER"),
        org: labels.get_or_insert("ORG"),
        loc: labels.get_or_insert("LOC"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = make_corpus(&mut rng, &inv, cfg.kind, cfg.n_train, Split::Train);
    let dev = make_corpus(&mut rng, &inv, cfg.kind, cfg.n_dev, Split::Dev);
    let test = make_corpus(&mut rng, &inv, cfg.kind, cfg.n_test, Split::Test);
    let table = make_embeddings(cfg.embedding_dim, cfg.seed);
    SynthData {
        train,
        dev,
        test,
        labels,
        table,
    }
}

/// Write the generated dataset under `dir`: corpora in BIO format (flat)
/// or JSON lines (nested), plus `embeddings.txt` in the word2vec text
/// layout.
pub fn write_dataset(data: &SynthData, kind: SynthKind, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    match kind {
        SynthKind::Flat => {
            write_bio(&data.train, &data.labels, &dir.join("train.bio"))?;
            write_bio(&data.dev, &data.labels, &dir.join("dev.bio"))?;
            write_bio(&data.test, &data.labels, &dir.join("test.bio"))?;
        }
        SynthKind::Nested => {
            write_nested(&data.train, &data.labels, &dir.join("train.jsonl"))?;
            write_nested(&data.dev, &data.labels, &dir.join("dev.jsonl"))?;
            write_nested(&data.test, &data.labels, &dir.join("test.jsonl"))?;
        }
    }
    let mut out = String::new();
    let mut words: Vec<&(&str, usize)> = Vec::new();
    let vocab = vocabulary();
    for wc in &vocab {
        words.push(wc);
    }
    for (word, _) in words {
        out.push_str(word);
        for v in data.table.lookup(word) {
            out.push(' ');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(dir.join("embeddings.txt"), out)?;
    Ok(())
}

/// Count (outer, inner) gold pairs where `inner` lies strictly inside
/// `outer` — the denominator of the nested-recovery check.
pub fn strictly_nested_pairs(corpus: &Corpus) -> Vec<(usize, LabeledSpan, LabeledSpan)> {
    let mut out = Vec::new();
    for s in &corpus.sentences {
        for outer in &s.gold_spans {
            for inner in &s.gold_spans {
                if inner.span.strictly_inside(&outer.span) {
                    out.push((s.id, *outer, *inner));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_bio, parse_nested, Scheme};

    #[test]
    fn generation_is_deterministic_and_sized() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.train.sentences, b.train.sentences);
        assert_eq!(a.test.sentences, b.test.sentences);
        assert_eq!(a.train.sentences.len(), 200);
        assert_eq!(a.dev.sentences.len(), 50);
        assert_eq!(a.test.sentences.len(), 50);
        assert_eq!(a.labels.names(), &["NULL", "PER", "ORG", "LOC"]);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(&SynthConfig::default());
        let b = generate(&SynthConfig {
            seed: 99,
            ..SynthConfig::default()
        });
        assert_ne!(a.train.sentences, b.train.sentences);
    }

    #[test]
    fn flat_corpus_has_no_overlapping_gold() {
        let data = generate(&SynthConfig::default());
        for corpus in [&data.train, &data.dev, &data.test] {
            for s in &corpus.sentences {
                assert!(!s.gold_spans.is_empty() || s.tokens.len() > 2);
                for (i, x) in s.gold_spans.iter().enumerate() {
                    for y in &s.gold_spans[i + 1..] {
                        assert!(
                            x.span.b < y.span.a || y.span.b < x.span.a,
                            "overlap in flat sentence {}",
                            s.id
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn every_token_has_an_embedding() {
        let data = generate(&SynthConfig::default());
        for corpus in [&data.train, &data.dev, &data.test] {
            for s in &corpus.sentences {
                for t in &s.tokens {
                    assert!(data.table.contains(t), "no vector for {t}");
                }
            }
        }
    }

    #[test]
    fn gold_spans_fit_the_default_width_cap() {
        let data = generate(&SynthConfig::default());
        for s in &data.train.sentences {
            for g in &s.gold_spans {
                assert!(g.span.width() <= 6);
                assert!(g.span.b <= s.tokens.len());
            }
        }
    }

    #[test]
    fn nested_corpus_contains_plenty_of_nested_pairs() {
        let data = generate(&SynthConfig {
            kind: SynthKind::Nested,
            ..SynthConfig::default()
        });
        let pairs = strictly_nested_pairs(&data.test);
        assert!(
            pairs.len() >= 20,
            "only {} nested pairs in 50 test sentences",
            pairs.len()
        );
        for (_, outer, inner) in &pairs {
            assert!(inner.span.strictly_inside(&outer.span));
        }
    }

    #[test]
    fn entity_words_recur_across_splits_at_full_size() {
        // the parity experiment relies on test name words being seen in
        // training at full size; random pairing makes full two-token
        // forms rare, but word-level overlap must be near-total
        let data = generate(&SynthConfig::default());
        let words = |c: &Corpus| -> std::collections::BTreeSet<String> {
            c.sentences
                .iter()
                .flat_map(|s| {
                    s.gold_spans
                        .iter()
                        .flat_map(|g| s.tokens[g.span.a - 1..g.span.b].iter().cloned())
                })
                .collect()
        };
        let train_words = words(&data.train);
        let test_words = words(&data.test);
        let seen = test_words.iter().filter(|w| train_words.contains(*w)).count();
        assert!(
            seen as f64 >= 0.95 * test_words.len() as f64,
            "{seen}/{} test entity words seen in training",
            test_words.len()
        );
    }

    #[test]
    fn written_flat_dataset_parses_back_identically() {
        let data = generate(&SynthConfig {
            n_train: 20,
            n_dev: 5,
            n_test: 5,
            ..SynthConfig::default()
        });
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&data, SynthKind::Flat, dir.path()).unwrap();

        let mut labels = data.labels.clone();
        let back = parse_bio(
            &dir.path().join("train.bio"),
            Scheme::Auto,
            &mut labels,
            Split::Train,
        )
        .unwrap();
        assert_eq!(back.sentences.len(), 20);
        for (a, b) in back.sentences.iter().zip(&data.train.sentences) {
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.gold_spans, b.gold_spans);
        }

        let table = crate::corpus::load_embeddings(
            &dir.path().join("embeddings.txt"),
            data.table.dim(),
        )
        .unwrap();
        for s in &back.sentences {
            for t in &s.tokens {
                assert_eq!(table.lookup(t), data.table.lookup(t));
            }
        }
    }

    #[test]
    fn written_nested_dataset_parses_back_identically() {
        let data = generate(&SynthConfig {
            kind: SynthKind::Nested,
            n_train: 15,
            n_dev: 5,
            n_test: 5,
            ..SynthConfig::default()
        });
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&data, SynthKind::Nested, dir.path()).unwrap();
        let mut labels = data.labels.clone();
        let back = parse_nested(
            &dir.path().join("train.jsonl"),
            &mut labels,
            Split::Train,
        )
        .unwrap();
        for (a, b) in back.sentences.iter().zip(&data.train.sentences) {
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.gold_spans, b.gold_spans);
        }
    }
}
