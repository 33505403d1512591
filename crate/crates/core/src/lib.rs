//! Span-based sequence labeling with an instance-based (nearest-instance)
//! head and a conventional classifier head over a shared BiLSTM span encoder.
//!
//! The pipeline: tokens are embedded (frozen word vectors plus a trainable
//! character CNN), contextualized by a stacked BiLSTM, and every candidate
//! span up to a width cap is summarized by boundary-state arithmetic and
//! projected to a fixed-size representation. The classifier head scores each
//! span against per-label weight vectors; the instance head scores it against
//! concrete training-set spans and aggregates neighbor probabilities per
//! label, which makes each prediction explainable by pointing at the
//! neighbors that produced it.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod heads;
pub mod inference;
pub mod model;
pub mod numcore;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};

// The types shared across the workspace, re-exported so downstream crates can
// name them without reaching into modules.
pub use corpus::{
    load_embeddings, parse_bio, parse_nested, write_bio, write_nested, CharVocab, Corpus,
    EmbeddingTable, LabelSet, LabeledSpan, Scheme, Sentence, Span, Split,
};
pub use encoder::{EncoderConfig, SpanMode};
pub use evaluator::{span_f1, Metrics};
pub use heads::{HeadKind, SupportItem, SupportSet};
pub use inference::{Explanation, Prediction, PredictionRecord};
pub use model::Model;
pub use trainer::{train, TrainConfig, TrainReport};
