//! Static word embeddings (GloVe-style text format) and averaged sentence
//! vectors.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sentence;
use crate::error::{Error, Result};

/// Seed for the out-of-vocabulary vector. Fixed so the same table file
/// always yields the same unk vector, independent of any training seed.
const UNK_SEED: u64 = 0x00c0ffee;

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    unk: Vec<f64>,
    /// Lines that re-defined an earlier word (last occurrence kept).
    pub duplicate_count: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(UNK_SEED);
        let bound = 0.5 / dim as f64;
        let unk = (0..dim).map(|_| rng.gen_range(-bound..bound)).collect();
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
            unk,
            duplicate_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) {
        debug_assert_eq!(vector.len(), self.dim);
        if self.vectors.insert(word.to_string(), vector).is_some() {
            self.duplicate_count += 1;
        }
    }

    /// Exact match first, then the lowercased form, then the unk vector.
    pub fn lookup(&self, word: &str) -> &[f64] {
        if let Some(v) = self.vectors.get(word) {
            return v;
        }
        if let Some(v) = self.vectors.get(&word.to_lowercase()) {
            return v;
        }
        &self.unk
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    pub fn unk(&self) -> &[f64] {
        &self.unk
    }
}

/// Parse a "word v1 … vD" text file.
pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut table = EmbeddingTable::new(expected_dim);
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap();
        let values: Vec<&str> = parts.collect();
        if values.len() != expected_dim {
            return Err(Error::DimMismatch {
                path: display,
                line: lineno + 1,
                expected: expected_dim,
                got: values.len(),
            });
        }
        let mut vector = Vec::with_capacity(expected_dim);
        for v in values {
            vector.push(v.parse::<f64>().map_err(|e| Error::MalformedLine {
                path: display.clone(),
                line: lineno + 1,
                msg: format!("bad float `{v}`: {e}"),
            })?);
        }
        table.insert(word, vector);
    }
    Ok(table)
}

/// Token-embedding average: (1/T)·Σ_t embed(w_t), unk for OOV tokens.
pub fn sentence_vector(sentence: &Sentence, table: &EmbeddingTable) -> Vec<f64> {
    let mut acc = vec![0.0; table.dim()];
    for tok in &sentence.tokens {
        for (a, &v) in acc.iter_mut().zip(table.lookup(tok)) {
            *a += v;
        }
    }
    let t = sentence.len() as f64;
    acc.iter_mut().for_each(|a| *a /= t);
    acc
}
