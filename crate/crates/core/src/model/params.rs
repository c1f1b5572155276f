//! The three trainable parameter groups: the encoder-decoder backbone, the
//! output projection head, and the soft prompt vectors.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::mat::Mat;
use crate::rng::Rng;

/// Reference architecture dimensions. Small enough that every gradient can
/// be finite-difference checked, while still exercising all three groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_width: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub vocab_cap: usize,
    pub prompt_len: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_model: 64,
            n_heads: 4,
            ff_width: 128,
            enc_layers: 2,
            dec_layers: 2,
            vocab_cap: 512,
            prompt_len: 20,
        }
    }
}

impl ModelDims {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn tiny_for_tests() -> Self {
        ModelDims {
            d_model: 16,
            n_heads: 2,
            ff_width: 32,
            enc_layers: 1,
            dec_layers: 1,
            vocab_cap: 64,
            prompt_len: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnWeights {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
}

impl AttnWeights {
    fn init(d: usize, std: f64, rng: &mut Rng) -> Self {
        AttnWeights {
            wq: Mat::gauss(d, d, std, rng),
            wk: Mat::gauss(d, d, std, rng),
            wv: Mat::gauss(d, d, std, rng),
            wo: Mat::gauss(d, d, std, rng),
        }
    }

    fn zeros(d: usize) -> Self {
        AttnWeights {
            wq: Mat::zeros(d, d),
            wk: Mat::zeros(d, d),
            wv: Mat::zeros(d, d),
            wo: Mat::zeros(d, d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    /// (ff_width, d_model)
    pub w1: Mat,
    /// (d_model, ff_width)
    pub w2: Mat,
}

impl FeedForward {
    fn init(d: usize, ff: usize, std: f64, rng: &mut Rng) -> Self {
        FeedForward {
            w1: Mat::gauss(ff, d, std, rng),
            w2: Mat::gauss(d, ff, std, rng),
        }
    }

    fn zeros(d: usize, ff: usize) -> Self {
        FeedForward {
            w1: Mat::zeros(ff, d),
            w2: Mat::zeros(d, ff),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub attn: AttnWeights,
    pub ff: FeedForward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderLayer {
    pub self_attn: AttnWeights,
    pub cross_attn: AttnWeights,
    pub ff: FeedForward,
}

/// Backbone parameters: token embeddings plus encoder and decoder stacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub dims: ModelDims,
    pub vocab_size: usize,
    /// (vocab_size, d_model)
    pub embedding: Mat,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
}

// Near 1/sqrt(d_model): keeps activations and gradients O(1) through the
// stack, which plain SGD needs to move a randomly initialized backbone.
const INIT_STD: f64 = 0.08;

impl Backbone {
    pub fn init(dims: ModelDims, vocab_size: usize, rng: &mut Rng) -> Self {
        let d = dims.d_model;
        Backbone {
            dims,
            vocab_size,
            embedding: Mat::gauss(vocab_size, d, INIT_STD, rng),
            encoder: (0..dims.enc_layers)
                .map(|_| EncoderLayer {
                    attn: AttnWeights::init(d, INIT_STD, rng),
                    ff: FeedForward::init(d, dims.ff_width, INIT_STD, rng),
                })
                .collect(),
            decoder: (0..dims.dec_layers)
                .map(|_| DecoderLayer {
                    self_attn: AttnWeights::init(d, INIT_STD, rng),
                    cross_attn: AttnWeights::init(d, INIT_STD, rng),
                    ff: FeedForward::init(d, dims.ff_width, INIT_STD, rng),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let d = self.dims.d_model;
        let ff = self.dims.ff_width;
        Backbone {
            dims: self.dims,
            vocab_size: self.vocab_size,
            embedding: Mat::zeros(self.vocab_size, d),
            encoder: (0..self.dims.enc_layers)
                .map(|_| EncoderLayer {
                    attn: AttnWeights::zeros(d),
                    ff: FeedForward::zeros(d, ff),
                })
                .collect(),
            decoder: (0..self.dims.dec_layers)
                .map(|_| DecoderLayer {
                    self_attn: AttnWeights::zeros(d),
                    cross_attn: AttnWeights::zeros(d),
                    ff: FeedForward::zeros(d, ff),
                })
                .collect(),
        }
    }

    /// All weight matrices in a stable order (for hashing, flat indexing,
    /// and SGD updates).
    pub fn mats(&self) -> Vec<&Mat> {
        let mut out = vec![&self.embedding];
        for layer in &self.encoder {
            out.extend([
                &layer.attn.wq,
                &layer.attn.wk,
                &layer.attn.wv,
                &layer.attn.wo,
                &layer.ff.w1,
                &layer.ff.w2,
            ]);
        }
        for layer in &self.decoder {
            out.extend([
                &layer.self_attn.wq,
                &layer.self_attn.wk,
                &layer.self_attn.wv,
                &layer.self_attn.wo,
                &layer.cross_attn.wq,
                &layer.cross_attn.wk,
                &layer.cross_attn.wv,
                &layer.cross_attn.wo,
                &layer.ff.w1,
                &layer.ff.w2,
            ]);
        }
        out
    }

    pub fn mats_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.embedding];
        for layer in &mut self.encoder {
            out.extend([
                &mut layer.attn.wq,
                &mut layer.attn.wk,
                &mut layer.attn.wv,
                &mut layer.attn.wo,
                &mut layer.ff.w1,
                &mut layer.ff.w2,
            ]);
        }
        for layer in &mut self.decoder {
            out.extend([
                &mut layer.self_attn.wq,
                &mut layer.self_attn.wk,
                &mut layer.self_attn.wv,
                &mut layer.self_attn.wo,
                &mut layer.cross_attn.wq,
                &mut layer.cross_attn.wk,
                &mut layer.cross_attn.wv,
                &mut layer.cross_attn.wo,
                &mut layer.ff.w1,
                &mut layer.ff.w2,
            ]);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.mats().iter().map(|m| m.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.mats().iter().all(|m| m.is_finite())
    }

    pub fn hash(&self) -> String {
        hash_mats(&self.mats())
    }
}

/// Output projection: maps decoder states to vocabulary logits, or pooled
/// encoder states to class logits for the discriminative baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputHead {
    /// (output_size, d_model)
    pub proj: Mat,
}

impl OutputHead {
    pub fn init(output_size: usize, d_model: usize, rng: &mut Rng) -> Self {
        OutputHead {
            proj: Mat::gauss(output_size, d_model, INIT_STD, rng),
        }
    }

    pub fn zeros(output_size: usize, d_model: usize) -> Self {
        OutputHead {
            proj: Mat::zeros(output_size, d_model),
        }
    }

    pub fn zeros_like(&self) -> Self {
        OutputHead {
            proj: Mat::zeros(self.proj.rows, self.proj.cols),
        }
    }

    pub fn hash(&self) -> String {
        hash_mats(&[&self.proj])
    }
}

/// Learnable virtual tokens prepended to the embedded input sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftPrompt {
    /// (prompt_len, d_model)
    pub vectors: Mat,
}

impl SoftPrompt {
    pub fn init(prompt_len: usize, d_model: usize, rng: &mut Rng) -> Self {
        SoftPrompt {
            vectors: Mat::gauss(prompt_len, d_model, INIT_STD, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        SoftPrompt {
            vectors: Mat::zeros(self.vectors.rows, self.vectors.cols),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.rows
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows == 0
    }

    pub fn hash(&self) -> String {
        hash_mats(&[&self.vectors])
    }
}

/// Hash of raw f64 bit patterns; bit-identical parameters hash identically.
pub fn hash_mats(mats: &[&Mat]) -> String {
    let mut hasher = Sha256::new();
    for m in mats {
        hasher.update((m.rows as u64).to_le_bytes());
        hasher.update((m.cols as u64).to_le_bytes());
        for v in &m.data {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}
