//! The trained artifact: parameter store, encoder, head choice, and the
//! vocabularies the parameters were built against, saved and restored as one
//! unit so a prediction run can never mix mismatched pieces.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CharVocab, LabelSet, NULL_LABEL};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::heads::{ClassifierHead, HeadKind};
use crate::numcore::{load_checkpoint, save_checkpoint, ParamStore};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    encoder: EncoderConfig,
    head: HeadKind,
    labels: LabelSet,
    chars: CharVocab,
    /// Free-form caller metadata (e.g. the training configuration echo);
    /// `null` when absent. Preserved verbatim across load/save.
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Debug)]
pub struct Model {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub head: HeadKind,
    /// Present exactly when `head` is `Classifier`.
    pub classifier: Option<ClassifierHead>,
    pub labels: LabelSet,
    pub chars: CharVocab,
    /// Caller metadata stored in the checkpoint alongside the parameters.
    pub extra: serde_json::Value,
}

impl Model {
    /// Fresh model with randomly initialized parameters. Registration order
    /// is fixed (encoder first, then the classifier head when present) so
    /// that equal seeds give bitwise-equal parameters.
    pub fn new(
        config: EncoderConfig,
        head: HeadKind,
        labels: LabelSet,
        chars: CharVocab,
        seed: u64,
    ) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::config(
                "labels",
                "need at least one label besides NULL",
            ));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(config.clone(), chars.len(), &mut store, &mut rng)?;
        let classifier = match head {
            HeadKind::Classifier => Some(ClassifierHead::new(
                labels.len(),
                config.span_dim,
                &mut store,
                &mut rng,
            )?),
            HeadKind::Instance => None,
        };
        Ok(Model {
            store,
            encoder,
            head,
            classifier,
            labels,
            chars,
            extra: serde_json::Value::Null,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ModelMeta {
            encoder: self.encoder.config.clone(),
            head: self.head,
            labels: self.labels.clone(),
            chars: self.chars.clone(),
            extra: self.extra.clone(),
        };
        let meta = serde_json::to_value(&meta)?;
        save_checkpoint(path, &self.store, meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = load_checkpoint(path)?;
        let meta: ModelMeta = serde_json::from_value(meta)
            .map_err(|e| Error::Checkpoint(format!("bad model metadata: {e}")))?;
        if meta.labels.names().first().map(String::as_str) != Some(NULL_LABEL) {
            return Err(Error::Checkpoint(
                "label inventory does not start with NULL".into(),
            ));
        }
        let mut store = ParamStore::new();
        for (name, value) in params {
            store.register(&name, value);
        }
        let encoder = Encoder::from_store(meta.encoder, &store)?;
        let classifier = match meta.head {
            HeadKind::Classifier => Some(ClassifierHead::from_store(meta.labels.len(), &store)?),
            HeadKind::Instance => None,
        };
        Ok(Model {
            store,
            encoder,
            head: meta.head,
            classifier,
            labels: meta.labels,
            chars: meta.chars,
            extra: meta.extra,
        })
    }
}
