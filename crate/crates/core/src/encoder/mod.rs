//! Span encoder: frozen word embedding ⊕ trainable char-CNN per token, a
//! stacked BiLSTM for context, boundary-state arithmetic for span features,
//! and a linear projection to the shared span representation h_s.
//!
//! Span features follow the LSTM-minus construction. For a span (a, b) in a
//! T-token sentence, the flat variant is
//! `[→h_b − →h_{a−1}, ←h_a − ←h_{b+1}]` and the nested variant appends
//! `[→h_a + →h_b, ←h_a + ←h_b]`; the out-of-range boundary states →h_0 and
//! ←h_{T+1} are zero vectors.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CharVocab, EmbeddingTable, Sentence, Span, CHAR_PAD};
use crate::error::{Error, Result};
use crate::numcore::{
    init_glorot, init_orthonormal, Graph, GraphParams, NodeId, ParamId, ParamStore, Tensor,
};

/// Which span-feature arity to produce: 2·hidden for flat span sets,
/// 4·hidden when spans may nest (also used for chunking).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanMode {
    Flat,
    Nested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_window: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    /// Output width d of the span projection, shared by both heads.
    pub span_dim: usize,
    pub max_span_width: usize,
    pub mode: SpanMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            word_dim: 100,
            char_dim: 30,
            char_filters: 30,
            char_window: 3,
            lstm_layers: 2,
            lstm_hidden: 100,
            span_dim: 256,
            max_span_width: 6,
            mode: SpanMode::Flat,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_filters", self.char_filters),
            ("char_window", self.char_window),
            ("lstm_layers", self.lstm_layers),
            ("lstm_hidden", self.lstm_hidden),
            ("span_dim", self.span_dim),
            ("max_span_width", self.max_span_width),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        Ok(())
    }

    /// Width of h^lstm_s: 2 or 4 hidden-state parts depending on mode.
    pub fn feature_arity(&self) -> usize {
        match self.mode {
            SpanMode::Flat => 2 * self.lstm_hidden,
            SpanMode::Nested => 4 * self.lstm_hidden,
        }
    }
}

#[derive(Debug)]
struct LstmDir {
    wx: ParamId,
    uh: ParamId,
    b: ParamId,
}

#[derive(Debug)]
struct LstmLayer {
    fwd: LstmDir,
    bwd: LstmDir,
}

/// Parameter handles for the whole encoder. Construction registers every
/// parameter in a fixed order, which fixes checkpoint layout and the
/// optimizer walk.
#[derive(Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    char_emb: ParamId,
    char_conv_w: ParamId,
    char_conv_b: ParamId,
    layers: Vec<LstmLayer>,
    proj_w: ParamId,
}

/// Top-layer BiLSTM states for one sentence, as graph nodes. `fwd[t]` and
/// `bwd[t]` hold →h_{t+1} and ←h_{t+1}; `zero` is the shared boundary state.
#[derive(Debug)]
pub struct ContextStates {
    pub fwd: Vec<NodeId>,
    pub bwd: Vec<NodeId>,
    pub zero: NodeId,
}

impl ContextStates {
    pub fn len(&self) -> usize {
        self.fwd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fwd.is_empty()
    }
}

impl Encoder {
    pub fn new(
        config: EncoderConfig,
        char_vocab_len: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let h = config.lstm_hidden;

        let char_emb = store.register(
            "char_emb",
            init_glorot(&[char_vocab_len, config.char_dim], rng)?,
        );
        let char_conv_w = store.register(
            "char_conv.w",
            init_glorot(&[config.char_filters, config.char_window * config.char_dim], rng)?,
        );
        let char_conv_b = store.register("char_conv.b", Tensor::zeros(&[config.char_filters]));

        let mut layers = Vec::with_capacity(config.lstm_layers);
        for l in 0..config.lstm_layers {
            let in_dim = if l == 0 {
                config.word_dim + config.char_filters
            } else {
                2 * h
            };
            let mut dir = |name: &str, rng: &mut ChaCha8Rng| -> Result<LstmDir> {
                Ok(LstmDir {
                    wx: store.register(
                        &format!("lstm.l{l}.{name}.wx"),
                        init_orthonormal(&[4 * h, in_dim], rng)?,
                    ),
                    uh: store.register(
                        &format!("lstm.l{l}.{name}.uh"),
                        init_orthonormal(&[4 * h, h], rng)?,
                    ),
                    b: store.register(&format!("lstm.l{l}.{name}.b"), Tensor::zeros(&[4 * h])),
                })
            };
            let fwd = dir("fwd", rng)?;
            let bwd = dir("bwd", rng)?;
            layers.push(LstmLayer { fwd, bwd });
        }

        let proj_w = store.register(
            "proj.w",
            init_glorot(&[config.span_dim, config.feature_arity()], rng)?,
        );

        Ok(Encoder {
            config,
            char_emb,
            char_conv_w,
            char_conv_b,
            layers,
            proj_w,
        })
    }

    /// Rebuild handles against a store that already holds the parameters
    /// (checkpoint load). Names must match the registration layout.
    pub fn from_store(config: EncoderConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let find = |name: &str| {
            store
                .id_by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
        };
        let mut layers = Vec::with_capacity(config.lstm_layers);
        for l in 0..config.lstm_layers {
            let dir = |name: &str| -> Result<LstmDir> {
                Ok(LstmDir {
                    wx: find(&format!("lstm.l{l}.{name}.wx"))?,
                    uh: find(&format!("lstm.l{l}.{name}.uh"))?,
                    b: find(&format!("lstm.l{l}.{name}.b"))?,
                })
            };
            layers.push(LstmLayer {
                fwd: dir("fwd")?,
                bwd: dir("bwd")?,
            });
        }
        Ok(Encoder {
            config,
            char_emb: find("char_emb")?,
            char_conv_w: find("char_conv.w")?,
            char_conv_b: find("char_conv.b")?,
            layers,
            proj_w: find("proj.w")?,
        })
    }

    /// One token's input vector: frozen word embedding ⊕ char-CNN output.
    fn token_vector(
        &self,
        g: &mut Graph,
        pn: &mut GraphParams,
        store: &ParamStore,
        token: &str,
        chars: &CharVocab,
        table: &EmbeddingTable,
    ) -> Result<NodeId> {
        // The word embedding enters as a constant, never a parameter, so it
        // stays frozen by construction.
        let word = g.constant(Tensor::vector(table.lookup(token).to_vec()));

        let mut ids = Vec::with_capacity(token.chars().count() + self.config.char_window - 1);
        let left = (self.config.char_window - 1) / 2;
        let right = self.config.char_window - 1 - left;
        ids.extend(std::iter::repeat(CHAR_PAD).take(left));
        ids.extend(chars.encode(token));
        ids.extend(std::iter::repeat(CHAR_PAD).take(right));

        let emb_table = pn.node(g, store, self.char_emb);
        let conv_w = pn.node(g, store, self.char_conv_w);
        let conv_b = pn.node(g, store, self.char_conv_b);
        let char_rows = g.embedding_lookup(emb_table, ids)?;
        let char_vec = g.conv1d_maxpool(char_rows, conv_w, conv_b, self.config.char_window)?;

        g.concat_rows(&[word, char_vec])
    }

    /// Run one LSTM direction over the columns of `x` (already ordered in
    /// scan direction). Gate layout inside the fused 4H block: i, f, o, g.
    fn lstm_scan(
        &self,
        g: &mut Graph,
        pn: &mut GraphParams,
        store: &ParamStore,
        dir: &LstmDir,
        x: NodeId,
        zero: NodeId,
    ) -> Result<Vec<NodeId>> {
        let h_dim = self.config.lstm_hidden;
        let t_len = g.value(x).cols();
        let wx = pn.node(g, store, dir.wx);
        let uh = pn.node(g, store, dir.uh);
        let b = pn.node(g, store, dir.b);
        let xp = g.matmul(wx, x)?;

        let mut h = zero;
        let mut c = zero;
        let mut states = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let xt = g.col(xp, t)?;
            let uhh = g.matmul(uh, h)?;
            let pre = g.add(xt, uhh)?;
            let z = g.add(pre, b)?;
            let zi = g.slice(z, 0, h_dim)?;
            let zf = g.slice(z, h_dim, h_dim)?;
            let zo = g.slice(z, 2 * h_dim, h_dim)?;
            let zg = g.slice(z, 3 * h_dim, h_dim)?;
            let i_gate = g.sigmoid(zi);
            let f_gate = g.sigmoid(zf);
            let o_gate = g.sigmoid(zo);
            let g_gate = g.tanh(zg);
            let fc = g.mul(f_gate, c)?;
            let ig = g.mul(i_gate, g_gate)?;
            c = g.add(fc, ig)?;
            let ct = g.tanh(c);
            h = g.mul(o_gate, ct)?;
            states.push(h);
        }
        Ok(states)
    }

    /// Encode a sentence into top-layer contextual states. Dropout (train
    /// graphs only) is applied to the token-encoding output and again to
    /// every LSTM layer's input.
    pub fn encode_tokens(
        &self,
        g: &mut Graph,
        pn: &mut GraphParams,
        store: &ParamStore,
        sentence: &Sentence,
        chars: &CharVocab,
        table: &EmbeddingTable,
        dropout: f64,
    ) -> Result<ContextStates> {
        debug_assert!(!sentence.is_empty());
        if table.dim() != self.config.word_dim {
            return Err(Error::ShapeMismatch {
                op: "encode_tokens",
                details: format!(
                    "embedding table dim {} vs configured word_dim {}",
                    table.dim(),
                    self.config.word_dim
                ),
            });
        }
        let h_dim = self.config.lstm_hidden;
        let zero = g.constant(Tensor::zeros(&[h_dim]));

        let token_vecs: Vec<NodeId> = sentence
            .tokens
            .iter()
            .map(|tok| self.token_vector(g, pn, store, tok, chars, table))
            .collect::<Result<_>>()?;
        let stacked = g.concat_cols(&token_vecs)?;
        let mut x = g.dropout(stacked, dropout)?;

        let mut fwd = Vec::new();
        let mut bwd = Vec::new();
        for layer in &self.layers {
            let x_in = g.dropout(x, dropout)?;
            fwd = self.lstm_scan(g, pn, store, &layer.fwd, x_in, zero)?;

            // Backward direction scans reversed columns; re-reverse so
            // bwd[t] lines up with token t+1.
            let t_len = g.value(x_in).cols();
            let rev_cols: Vec<NodeId> = (0..t_len)
                .rev()
                .map(|t| g.col(x_in, t))
                .collect::<Result<_>>()?;
            let x_rev = g.concat_cols(&rev_cols)?;
            let mut states = self.lstm_scan(g, pn, store, &layer.bwd, x_rev, zero)?;
            states.reverse();
            bwd = states;

            let pairs: Vec<NodeId> = (0..t_len)
                .map(|t| g.concat_rows(&[fwd[t], bwd[t]]))
                .collect::<Result<_>>()?;
            x = g.concat_cols(&pairs)?;
        }

        Ok(ContextStates { fwd, bwd, zero })
    }

    /// `[→h_b − →h_{a−1}, ←h_a − ←h_{b+1}]`, a 2·hidden vector.
    pub fn span_features_flat(
        &self,
        g: &mut Graph,
        states: &ContextStates,
        span: Span,
    ) -> Result<NodeId> {
        let t_len = states.len();
        debug_assert!(span.a >= 1 && span.b <= t_len);
        let fwd_b = states.fwd[span.b - 1];
        let fwd_before = if span.a >= 2 {
            states.fwd[span.a - 2]
        } else {
            states.zero
        };
        let bwd_a = states.bwd[span.a - 1];
        let bwd_after = if span.b < t_len {
            states.bwd[span.b]
        } else {
            states.zero
        };
        let df = g.sub(fwd_b, fwd_before)?;
        let db = g.sub(bwd_a, bwd_after)?;
        g.concat_rows(&[df, db])
    }

    /// Flat features ⊕ `[→h_a + →h_b, ←h_a + ←h_b]`, a 4·hidden vector.
    pub fn span_features_nested(
        &self,
        g: &mut Graph,
        states: &ContextStates,
        span: Span,
    ) -> Result<NodeId> {
        let flat = self.span_features_flat(g, states, span)?;
        let sf = g.add(states.fwd[span.a - 1], states.fwd[span.b - 1])?;
        let sb = g.add(states.bwd[span.a - 1], states.bwd[span.b - 1])?;
        g.concat_rows(&[flat, sf, sb])
    }

    /// Feature vector h^lstm_s under the configured mode.
    pub fn span_features(
        &self,
        g: &mut Graph,
        states: &ContextStates,
        span: Span,
    ) -> Result<NodeId> {
        match self.config.mode {
            SpanMode::Flat => self.span_features_flat(g, states, span),
            SpanMode::Nested => self.span_features_nested(g, states, span),
        }
    }

    /// h_s = W · h^lstm_s. Accepts a single feature vector or a feature
    /// matrix with one span per column.
    pub fn project(
        &self,
        g: &mut Graph,
        pn: &mut GraphParams,
        store: &ParamStore,
        h_lstm: NodeId,
    ) -> Result<NodeId> {
        let w = pn.node(g, store, self.proj_w);
        g.matmul(w, h_lstm)
    }

    /// Encode the given spans of one sentence into a [span_dim, |spans|]
    /// matrix of span representations.
    pub fn encode_sentence_spans(
        &self,
        g: &mut Graph,
        pn: &mut GraphParams,
        store: &ParamStore,
        sentence: &Sentence,
        spans: &[Span],
        chars: &CharVocab,
        table: &EmbeddingTable,
        dropout: f64,
    ) -> Result<NodeId> {
        debug_assert!(!spans.is_empty());
        let states = self.encode_tokens(g, pn, store, sentence, chars, table, dropout)?;
        let feats: Vec<NodeId> = spans
            .iter()
            .map(|&s| self.span_features(g, &states, s))
            .collect::<Result<_>>()?;
        let stacked = g.concat_cols(&feats)?;
        self.project(g, pn, store, stacked)
    }
}
