//! Checkpoint serialization. The version string is a hash over the encoded
//! bytes, so identical training runs produce identical versions.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::company::Timestamp;
use crate::model::net::Paradigm;
use crate::model::params::{Backbone, OutputHead, SoftPrompt};
use crate::model::trainer::TrainConfig;
use crate::model::vocab::Vocabulary;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint decode failed: {0}")]
    Decode(String),
    #[error("unsupported checkpoint format version {0}")]
    Format(u32),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub train_config: TrainConfig,
    pub vocab: Vocabulary,
    pub backbone: Backbone,
    pub head: OutputHead,
    pub prompt: SoftPrompt,
    /// Sector names forming the label space at training time, in
    /// depth-first index order.
    pub sector_names: Vec<String>,
    pub steps_trained: usize,
    pub validation_accuracy: f64,
    pub trained_at: Timestamp,
}

impl Checkpoint {
    pub fn paradigm(&self) -> Paradigm {
        self.train_config.paradigm
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut checkpoint: Checkpoint =
            serde_json::from_slice(bytes).map_err(|e| CheckpointError::Decode(e.to_string()))?;
        if checkpoint.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Format(checkpoint.format_version));
        }
        checkpoint.vocab.reindex();
        Ok(checkpoint)
    }

    /// Model version string: hash of the serialized checkpoint.
    pub fn version(&self) -> String {
        version_of(&self.to_bytes())
    }
}

pub fn version_of(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn build_checkpoint(
    train_config: TrainConfig,
    vocab: Vocabulary,
    backbone: Backbone,
    head: OutputHead,
    prompt: SoftPrompt,
    sector_names: Vec<String>,
    steps_trained: usize,
    validation_accuracy: f64,
    trained_at: Timestamp,
) -> Checkpoint {
    Checkpoint {
        format_version: FORMAT_VERSION,
        train_config,
        vocab,
        backbone,
        head,
        prompt,
        sector_names,
        steps_trained,
        validation_accuracy,
        trained_at,
    }
}

/// Pretrained backbone bundle written by the pretrain step and consumed by
/// full finetunes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainedBase {
    pub format_version: u32,
    pub vocab: Vocabulary,
    pub backbone: Backbone,
    pub steps: usize,
}

impl PretrainedBase {
    pub fn new(vocab: Vocabulary, backbone: Backbone, steps: usize) -> Self {
        PretrainedBase {
            format_version: FORMAT_VERSION,
            vocab,
            backbone,
            steps,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("base serialization cannot fail")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut base: PretrainedBase =
            serde_json::from_slice(bytes).map_err(|e| CheckpointError::Decode(e.to_string()))?;
        if base.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Format(base.format_version));
        }
        base.vocab.reindex();
        Ok(base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelDims;
    use crate::rng::Rng;

    fn checkpoint() -> Checkpoint {
        let dims = ModelDims::tiny_for_tests();
        let mut rng = Rng::new(8);
        let vocab = Vocabulary::build(["alpha beta gamma"], 32);
        build_checkpoint(
            TrainConfig::default(),
            vocab.clone(),
            Backbone::init(dims, vocab.len(), &mut rng),
            OutputHead::init(vocab.len(), dims.d_model, &mut rng),
            SoftPrompt::init(dims.prompt_len, dims.d_model, &mut rng),
            vec!["fintech".to_string()],
            123,
            0.91,
            Timestamp(1_700_000_000),
        )
    }

    #[test]
    fn round_trip_preserves_version() {
        let ckpt = checkpoint();
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ckpt.version(), back.version());
        assert_eq!(back.backbone.hash(), ckpt.backbone.hash());
        assert_eq!(back.vocab.id("beta"), ckpt.vocab.id("beta"));
    }

    #[test]
    fn version_is_content_addressed() {
        let a = checkpoint();
        let mut b = checkpoint();
        assert_eq!(a.version(), b.version());
        b.validation_accuracy = 0.5;
        assert_ne!(a.version(), b.version());
    }

    #[test]
    fn corrupt_bytes_rejected() {
        let err = Checkpoint::from_bytes(b"not json").unwrap_err();
        assert!(matches!(err, CheckpointError::Decode(_)));
    }
}
