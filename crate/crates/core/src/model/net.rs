//! Encoder-decoder forward and backward passes, hand-derived, in f64.
//!
//! Pre-norm residual blocks with parameter-free RMSNorm, multi-head scaled
//! dot-product attention, ReLU feed-forward, scaled sinusoidal positions.
//! Soft prompts, when the paradigm uses them, are prepended to the embedded
//! encoder input before positions are added.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::mat::{axpy, dot, linear, linear_backward, log_sum_exp, softmax_inplace, Mat};
use crate::model::params::{AttnWeights, Backbone, FeedForward, OutputHead, SoftPrompt};
use crate::model::vocab::{EOS, PAD};

const RMS_EPS: f64 = 1e-6;
// Positions stay well below token-embedding magnitude; the task is mostly
// bag-of-words and position must not drown token identity.
const POS_SCALE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Paradigm {
    /// Backbone and prompts untouched; only the output head is trained.
    Prompting,
    /// Soft prompts and head trained; backbone frozen.
    PromptTuning,
    /// Backbone and head trained; no soft prompts.
    ModelTuning,
    /// Prompt tuning first, backbone unfrozen after the configured step.
    PromptPlusModelTuning,
    /// Discriminative baseline: pooled encoder state to class logits.
    MWayClassification,
}

impl Paradigm {
    pub fn uses_prompt(self) -> bool {
        matches!(self, Paradigm::PromptTuning | Paradigm::PromptPlusModelTuning)
    }

    pub fn uses_decoder(self) -> bool {
        !matches!(self, Paradigm::MWayClassification)
    }

    /// Whether the backbone receives updates at this (1-based) step.
    pub fn updates_backbone(self, step: usize, freeze_steps: usize) -> bool {
        match self {
            Paradigm::ModelTuning | Paradigm::MWayClassification => true,
            Paradigm::PromptPlusModelTuning => step > freeze_steps,
            Paradigm::Prompting | Paradigm::PromptTuning => false,
        }
    }

    pub fn updates_prompt(self) -> bool {
        self.uses_prompt()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("token index {index} out of range (vocab size {vocab})")]
    TokenOutOfRange { index: u32, vocab: usize },
    #[error("class index {index} out of range ({classes} classes)")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("empty target sequence")]
    EmptyTarget,
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("paradigm {0:?} has no generative decoder")]
    NotGenerative(Paradigm),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Supervision for one sample: token targets for generative paradigms, a
/// class index for the discriminative baseline.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Tokens(&'a [u32]),
    Class(usize),
}

/// Gradient accumulator shaped like the three parameter groups.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub backbone: Backbone,
    pub head: OutputHead,
    pub prompt: SoftPrompt,
}

impl Gradients {
    pub fn zeros_like(backbone: &Backbone, head: &OutputHead, prompt: &SoftPrompt) -> Self {
        Gradients {
            backbone: backbone.zeros_like(),
            head: head.zeros_like(),
            prompt: prompt.zeros_like(),
        }
    }

    pub fn zero_out(&mut self) {
        for m in self.backbone.mats_mut() {
            m.zero_out();
        }
        self.head.proj.zero_out();
        self.prompt.vectors.zero_out();
    }
}

#[derive(Debug)]
pub struct ForwardOutcome {
    pub loss: f64,
    /// Per-target-position logits (generative) or a single row of class
    /// logits (discriminative).
    pub logits: Mat,
}

// ---- building blocks -------------------------------------------------------

struct NormCache {
    inv: Vec<f64>,
    normed: Mat,
}

fn rmsnorm(x: &Mat) -> NormCache {
    let mut normed = Mat::zeros(x.rows, x.cols);
    let mut inv = vec![0.0; x.rows];
    let n = x.cols as f64;
    for (i, r_out) in inv.iter_mut().enumerate() {
        let row = x.row(i);
        let ms = dot(row, row) / n;
        let r = 1.0 / (ms + RMS_EPS).sqrt();
        *r_out = r;
        for (out, v) in normed.row_mut(i).iter_mut().zip(row) {
            *out = v * r;
        }
    }
    NormCache { inv, normed }
}

fn rmsnorm_backward(d_normed: &Mat, x: &Mat, inv: &[f64]) -> Mat {
    let mut dx = Mat::zeros(x.rows, x.cols);
    let n = x.cols as f64;
    for (i, &r) in inv.iter().enumerate() {
        let dy = d_normed.row(i);
        let xi = x.row(i);
        let proj = dot(dy, xi) * r * r * r / n;
        for ((out, &dyj), &xj) in dx.row_mut(i).iter_mut().zip(dy).zip(xi) {
            *out = r * dyj - proj * xj;
        }
    }
    dx
}

struct AttnCache {
    q: Mat,
    k: Mat,
    v: Mat,
    /// Per-head attention weights, each (n_q, n_k); masked slots are zero.
    attn: Vec<Mat>,
    heads_out: Mat,
}

fn attention(
    q_in: &Mat,
    kv_in: &Mat,
    w: &AttnWeights,
    n_heads: usize,
    causal: bool,
) -> (Mat, AttnCache) {
    let d = q_in.cols;
    let hd = d / n_heads;
    let scale = (hd as f64).sqrt();
    let q = linear(q_in, &w.wq);
    let k = linear(kv_in, &w.wk);
    let v = linear(kv_in, &w.wv);
    let n_q = q.rows;
    let n_k = k.rows;
    let mut heads_out = Mat::zeros(n_q, d);
    let mut attn = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let range = h * hd..(h + 1) * hd;
        let mut weights = Mat::zeros(n_q, n_k);
        for i in 0..n_q {
            let qi = &q.row(i)[range.clone()];
            let limit = if causal { i + 1 } else { n_k };
            let row = weights.row_mut(i);
            for (j, slot) in row.iter_mut().enumerate().take(limit) {
                *slot = dot(qi, &k.row(j)[range.clone()]) / scale;
            }
            softmax_inplace(&mut row[..limit]);
            for slot in row.iter_mut().skip(limit) {
                *slot = 0.0;
            }
        }
        for i in 0..n_q {
            let limit = if causal { i + 1 } else { n_k };
            for j in 0..limit {
                let a = weights.at(i, j);
                if a != 0.0 {
                    axpy(
                        &mut heads_out.row_mut(i)[range.clone()],
                        a,
                        &v.row(j)[range.clone()],
                    );
                }
            }
        }
        attn.push(weights);
    }
    let out = linear(&heads_out, &w.wo);
    (
        out,
        AttnCache {
            q,
            k,
            v,
            attn,
            heads_out,
        },
    )
}

/// Returns (d_q_in, d_kv_in), accumulating weight gradients.
fn attention_backward(
    d_out: &Mat,
    q_in: &Mat,
    kv_in: &Mat,
    cache: &AttnCache,
    w: &AttnWeights,
    grads: &mut AttnWeights,
    n_heads: usize,
) -> (Mat, Mat) {
    let d = q_in.cols;
    let hd = d / n_heads;
    let scale = (hd as f64).sqrt();
    let n_q = cache.q.rows;
    let n_k = cache.k.rows;

    let d_heads_out = linear_backward(d_out, &cache.heads_out, &w.wo, &mut grads.wo);

    let mut d_q = Mat::zeros(n_q, d);
    let mut d_k = Mat::zeros(n_k, d);
    let mut d_v = Mat::zeros(n_k, d);
    for h in 0..n_heads {
        let range = h * hd..(h + 1) * hd;
        let weights = &cache.attn[h];
        for i in 0..n_q {
            let d_ho = &d_heads_out.row(i)[range.clone()];
            // d_attn and softmax backward along the row.
            let mut d_attn = vec![0.0; n_k];
            for (j, slot) in d_attn.iter_mut().enumerate() {
                if weights.at(i, j) != 0.0 {
                    *slot = dot(d_ho, &cache.v.row(j)[range.clone()]);
                }
            }
            let row = weights.row(i);
            let inner: f64 = row.iter().zip(&d_attn).map(|(a, g)| a * g).sum();
            for j in 0..n_k {
                let a = row[j];
                if a == 0.0 {
                    continue;
                }
                let d_score = a * (d_attn[j] - inner);
                // v gradient
                axpy(&mut d_v.row_mut(j)[range.clone()], a, d_ho);
                // score fan-out to q and k
                if d_score != 0.0 {
                    axpy(
                        &mut d_q.row_mut(i)[range.clone()],
                        d_score / scale,
                        &cache.k.row(j)[range.clone()],
                    );
                    axpy(
                        &mut d_k.row_mut(j)[range.clone()],
                        d_score / scale,
                        &cache.q.row(i)[range.clone()],
                    );
                }
            }
        }
    }

    let d_q_in = linear_backward(&d_q, q_in, &w.wq, &mut grads.wq);
    let mut d_kv_in = linear_backward(&d_k, kv_in, &w.wk, &mut grads.wk);
    let d_kv_v = linear_backward(&d_v, kv_in, &w.wv, &mut grads.wv);
    for (a, b) in d_kv_in.data.iter_mut().zip(&d_kv_v.data) {
        *a += b;
    }
    (d_q_in, d_kv_in)
}

struct FfCache {
    pre: Mat,
    hidden: Mat,
}

fn feed_forward(x: &Mat, w: &FeedForward) -> (Mat, FfCache) {
    let pre = linear(x, &w.w1);
    let mut hidden = pre.clone();
    for v in hidden.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let out = linear(&hidden, &w.w2);
    (out, FfCache { pre, hidden })
}

fn feed_forward_backward(
    d_out: &Mat,
    x: &Mat,
    cache: &FfCache,
    w: &FeedForward,
    grads: &mut FeedForward,
) -> Mat {
    let mut d_hidden = linear_backward(d_out, &cache.hidden, &w.w2, &mut grads.w2);
    for (g, pre) in d_hidden.data.iter_mut().zip(&cache.pre.data) {
        if *pre <= 0.0 {
            *g = 0.0;
        }
    }
    linear_backward(&d_hidden, x, &w.w1, &mut grads.w1)
}

// ---- embedding -------------------------------------------------------------

fn add_positions(x: &mut Mat) {
    let d = x.cols;
    for pos in 0..x.rows {
        let row = x.row_mut(pos);
        for k in 0..d / 2 {
            let freq = 1.0 / 10_000f64.powf(2.0 * k as f64 / d as f64);
            let angle = pos as f64 * freq;
            row[2 * k] += POS_SCALE * angle.sin();
            row[2 * k + 1] += POS_SCALE * angle.cos();
        }
    }
}

fn check_ids(ids: &[u32], vocab: usize) -> Result<(), ModelError> {
    for &id in ids {
        if id as usize >= vocab {
            return Err(ModelError::TokenOutOfRange { index: id, vocab });
        }
    }
    Ok(())
}

fn embed_encoder_input(backbone: &Backbone, prompt: Option<&SoftPrompt>, ids: &[u32]) -> Mat {
    let d = backbone.dims.d_model;
    let p = prompt.map(|p| p.len()).unwrap_or(0);
    let mut x = Mat::zeros(p + ids.len(), d);
    if let Some(prompt) = prompt {
        for i in 0..p {
            x.row_mut(i).copy_from_slice(prompt.vectors.row(i));
        }
    }
    for (offset, &id) in ids.iter().enumerate() {
        x.row_mut(p + offset)
            .copy_from_slice(backbone.embedding.row(id as usize));
    }
    add_positions(&mut x);
    x
}

fn embed_decoder_input(backbone: &Backbone, dec_ids: &[u32]) -> Mat {
    let d = backbone.dims.d_model;
    let mut x = Mat::zeros(dec_ids.len(), d);
    for (i, &id) in dec_ids.iter().enumerate() {
        x.row_mut(i).copy_from_slice(backbone.embedding.row(id as usize));
    }
    add_positions(&mut x);
    x
}

// ---- encoder / decoder stacks ----------------------------------------------

struct EncLayerCache {
    input1: Mat,
    norm1: NormCache,
    attn: AttnCache,
    input2: Mat,
    norm2: NormCache,
    ff: FfCache,
}

struct EncStack {
    layers: Vec<EncLayerCache>,
    final_input: Mat,
    final_norm: NormCache,
}

fn encode(backbone: &Backbone, x0: Mat) -> (Mat, EncStack) {
    let heads = backbone.dims.n_heads;
    let mut x = x0;
    let mut layers = Vec::with_capacity(backbone.encoder.len());
    for layer in &backbone.encoder {
        let norm1 = rmsnorm(&x);
        let (attn_out, attn) = attention(&norm1.normed, &norm1.normed, &layer.attn, heads, false);
        let input1 = x;
        let mut x2 = input1.clone();
        for (a, b) in x2.data.iter_mut().zip(&attn_out.data) {
            *a += b;
        }
        let norm2 = rmsnorm(&x2);
        let (ff_out, ff) = feed_forward(&norm2.normed, &layer.ff);
        let input2 = x2;
        let mut x3 = input2.clone();
        for (a, b) in x3.data.iter_mut().zip(&ff_out.data) {
            *a += b;
        }
        layers.push(EncLayerCache {
            input1,
            norm1,
            attn,
            input2,
            norm2,
            ff,
        });
        x = x3;
    }
    let final_norm = rmsnorm(&x);
    let enc_out = final_norm.normed.clone();
    (
        enc_out,
        EncStack {
            layers,
            final_input: x,
            final_norm,
        },
    )
}

fn encode_backward(
    d_enc_out: &Mat,
    stack: &EncStack,
    backbone: &Backbone,
    grads: &mut Backbone,
) -> Mat {
    let heads = backbone.dims.n_heads;
    let mut d_x = rmsnorm_backward(d_enc_out, &stack.final_input, &stack.final_norm.inv);
    for (idx, (layer, cache)) in backbone.encoder.iter().zip(&stack.layers).enumerate().rev() {
        let g = &mut grads.encoder[idx];
        // x3 = x2 + ff(norm2(x2))
        let d_normed2 = feed_forward_backward(&d_x, &cache.norm2.normed, &cache.ff, &layer.ff, &mut g.ff);
        let d_norm2_in = rmsnorm_backward(&d_normed2, &cache.input2, &cache.norm2.inv);
        let mut d_x2 = d_x;
        for (a, b) in d_x2.data.iter_mut().zip(&d_norm2_in.data) {
            *a += b;
        }
        // x2 = x1 + attn(norm1(x1))
        let (d_q_in, d_kv_in) = attention_backward(
            &d_x2,
            &cache.norm1.normed,
            &cache.norm1.normed,
            &cache.attn,
            &layer.attn,
            &mut g.attn,
            heads,
        );
        let mut d_normed1 = d_q_in;
        for (a, b) in d_normed1.data.iter_mut().zip(&d_kv_in.data) {
            *a += b;
        }
        let d_norm1_in = rmsnorm_backward(&d_normed1, &cache.input1, &cache.norm1.inv);
        for (a, b) in d_x2.data.iter_mut().zip(&d_norm1_in.data) {
            *a += b;
        }
        d_x = d_x2;
    }
    d_x
}

struct DecLayerCache {
    input1: Mat,
    norm1: NormCache,
    self_attn: AttnCache,
    input2: Mat,
    norm2: NormCache,
    cross_attn: AttnCache,
    input3: Mat,
    norm3: NormCache,
    ff: FfCache,
}

struct DecStack {
    layers: Vec<DecLayerCache>,
    final_input: Mat,
    final_norm: NormCache,
}

fn decode(backbone: &Backbone, enc_out: &Mat, y0: Mat) -> (Mat, DecStack) {
    let heads = backbone.dims.n_heads;
    let mut y = y0;
    let mut layers = Vec::with_capacity(backbone.decoder.len());
    for layer in &backbone.decoder {
        let norm1 = rmsnorm(&y);
        let (sa_out, self_attn) =
            attention(&norm1.normed, &norm1.normed, &layer.self_attn, heads, true);
        let input1 = y;
        let mut y2 = input1.clone();
        for (a, b) in y2.data.iter_mut().zip(&sa_out.data) {
            *a += b;
        }
        let norm2 = rmsnorm(&y2);
        let (ca_out, cross_attn) =
            attention(&norm2.normed, enc_out, &layer.cross_attn, heads, false);
        let input2 = y2;
        let mut y3 = input2.clone();
        for (a, b) in y3.data.iter_mut().zip(&ca_out.data) {
            *a += b;
        }
        let norm3 = rmsnorm(&y3);
        let (ff_out, ff) = feed_forward(&norm3.normed, &layer.ff);
        let input3 = y3;
        let mut y4 = input3.clone();
        for (a, b) in y4.data.iter_mut().zip(&ff_out.data) {
            *a += b;
        }
        layers.push(DecLayerCache {
            input1,
            norm1,
            self_attn,
            input2,
            norm2,
            cross_attn,
            input3,
            norm3,
            ff,
        });
        y = y4;
    }
    let final_norm = rmsnorm(&y);
    let states = final_norm.normed.clone();
    (
        states,
        DecStack {
            layers,
            final_input: y,
            final_norm,
        },
    )
}

/// Returns (d_y0, d_enc_out accumulated over cross-attention layers).
fn decode_backward(
    d_states: &Mat,
    stack: &DecStack,
    enc_out: &Mat,
    backbone: &Backbone,
    grads: &mut Backbone,
) -> (Mat, Mat) {
    let heads = backbone.dims.n_heads;
    let mut d_enc_out = Mat::zeros(enc_out.rows, enc_out.cols);
    let mut d_y = rmsnorm_backward(d_states, &stack.final_input, &stack.final_norm.inv);
    for (idx, (layer, cache)) in backbone.decoder.iter().zip(&stack.layers).enumerate().rev() {
        let g = &mut grads.decoder[idx];
        // y4 = y3 + ff(norm3(y3))
        let d_normed3 =
            feed_forward_backward(&d_y, &cache.norm3.normed, &cache.ff, &layer.ff, &mut g.ff);
        let d_norm3_in = rmsnorm_backward(&d_normed3, &cache.input3, &cache.norm3.inv);
        let mut d_y3 = d_y;
        for (a, b) in d_y3.data.iter_mut().zip(&d_norm3_in.data) {
            *a += b;
        }
        // y3 = y2 + cross(norm2(y2), enc_out)
        let (d_q_in, d_kv_in) = attention_backward(
            &d_y3,
            &cache.norm2.normed,
            enc_out,
            &cache.cross_attn,
            &layer.cross_attn,
            &mut g.cross_attn,
            heads,
        );
        for (a, b) in d_enc_out.data.iter_mut().zip(&d_kv_in.data) {
            *a += b;
        }
        let d_norm2_in = rmsnorm_backward(&d_q_in, &cache.input2, &cache.norm2.inv);
        let mut d_y2 = d_y3;
        for (a, b) in d_y2.data.iter_mut().zip(&d_norm2_in.data) {
            *a += b;
        }
        // y2 = y1 + self(norm1(y1))
        let (d_q_in, d_kv_in) = attention_backward(
            &d_y2,
            &cache.norm1.normed,
            &cache.norm1.normed,
            &cache.self_attn,
            &layer.self_attn,
            &mut g.self_attn,
            heads,
        );
        let mut d_normed1 = d_q_in;
        for (a, b) in d_normed1.data.iter_mut().zip(&d_kv_in.data) {
            *a += b;
        }
        let d_norm1_in = rmsnorm_backward(&d_normed1, &cache.input1, &cache.norm1.inv);
        for (a, b) in d_y2.data.iter_mut().zip(&d_norm1_in.data) {
            *a += b;
        }
        d_y = d_y2;
    }
    (d_y, d_enc_out)
}

// ---- full model ------------------------------------------------------------

fn decoder_input_ids(target_ids: &[u32]) -> Vec<u32> {
    let mut dec = Vec::with_capacity(target_ids.len());
    dec.push(PAD);
    dec.extend_from_slice(&target_ids[..target_ids.len() - 1]);
    dec
}

fn scatter_sequence_grads(
    d_x0: &Mat,
    ids: &[u32],
    prompt_rows: usize,
    d_embedding: &mut Mat,
    d_prompt: Option<&mut Mat>,
) {
    if let Some(d_prompt) = d_prompt {
        for i in 0..prompt_rows {
            axpy(d_prompt.row_mut(i), 1.0, d_x0.row(i));
        }
    }
    for (offset, &id) in ids.iter().enumerate() {
        axpy(d_embedding.row_mut(id as usize), 1.0, d_x0.row(prompt_rows + offset));
    }
}

fn validate(
    backbone: &Backbone,
    head: &OutputHead,
    input_ids: &[u32],
    target: &Target<'_>,
) -> Result<(), ModelError> {
    if input_ids.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    check_ids(input_ids, backbone.vocab_size)?;
    match target {
        Target::Tokens(ids) => {
            if ids.is_empty() {
                return Err(ModelError::EmptyTarget);
            }
            check_ids(ids, backbone.vocab_size)?;
            if head.proj.rows != backbone.vocab_size {
                return Err(ModelError::BadConfig(
                    "generative head rows must equal vocab size".to_string(),
                ));
            }
        }
        Target::Class(c) => {
            if *c >= head.proj.rows {
                return Err(ModelError::ClassOutOfRange {
                    index: *c,
                    classes: head.proj.rows,
                });
            }
        }
    }
    Ok(())
}

/// Pure forward pass: mean token-level cross entropy plus per-position
/// logits.
pub fn forward(
    backbone: &Backbone,
    head: &OutputHead,
    prompt: &SoftPrompt,
    paradigm: Paradigm,
    input_ids: &[u32],
    target: Target<'_>,
) -> Result<ForwardOutcome, ModelError> {
    validate(backbone, head, input_ids, &target)?;
    let used_prompt = paradigm.uses_prompt().then_some(prompt);
    let x0 = embed_encoder_input(backbone, used_prompt, input_ids);
    let (enc_out, _) = encode(backbone, x0);
    match target {
        Target::Class(class) => {
            let pooled = mean_rows(&enc_out);
            let logits_row = head_logits(&pooled, head);
            let loss = log_sum_exp(&logits_row) - logits_row[class];
            let logits = Mat {
                rows: 1,
                cols: logits_row.len(),
                data: logits_row,
            };
            Ok(ForwardOutcome { loss, logits })
        }
        Target::Tokens(target_ids) => {
            let dec_ids = decoder_input_ids(target_ids);
            let y0 = embed_decoder_input(backbone, &dec_ids);
            let (states, _) = decode(backbone, &enc_out, y0);
            let logits = linear(&states, &head.proj);
            let mut loss = 0.0;
            for (pos, &t) in target_ids.iter().enumerate() {
                let row = logits.row(pos);
                loss += log_sum_exp(row) - row[t as usize];
            }
            loss /= target_ids.len() as f64;
            Ok(ForwardOutcome { loss, logits })
        }
    }
}

fn mean_rows(m: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; m.cols];
    for i in 0..m.rows {
        axpy(&mut out, 1.0, m.row(i));
    }
    let inv = 1.0 / m.rows as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

fn head_logits(state: &[f64], head: &OutputHead) -> Vec<f64> {
    (0..head.proj.rows)
        .map(|o| dot(state, head.proj.row(o)))
        .collect()
}

/// Forward plus backward for one sample; gradients are accumulated into
/// `grads` scaled by `weight` (1/batch for mini-batch means). Returns the
/// sample loss.
#[allow(clippy::too_many_arguments)]
pub fn forward_backward(
    backbone: &Backbone,
    head: &OutputHead,
    prompt: &SoftPrompt,
    paradigm: Paradigm,
    input_ids: &[u32],
    target: Target<'_>,
    grads: &mut Gradients,
    weight: f64,
) -> Result<f64, ModelError> {
    validate(backbone, head, input_ids, &target)?;
    let used_prompt = paradigm.uses_prompt().then_some(prompt);
    let prompt_rows = used_prompt.map(|p| p.len()).unwrap_or(0);
    let x0 = embed_encoder_input(backbone, used_prompt, input_ids);
    let (enc_out, enc_stack) = encode(backbone, x0);

    let (loss, d_enc_out, dec_part) = match target {
        Target::Class(class) => {
            let pooled = mean_rows(&enc_out);
            let mut probs = head_logits(&pooled, head);
            let loss = log_sum_exp(&probs) - probs[class];
            softmax_inplace(&mut probs);
            probs[class] -= 1.0;
            // d_proj and d_pooled
            let mut d_pooled = vec![0.0; pooled.len()];
            for (o, &g) in probs.iter().enumerate() {
                let g = g * weight;
                if g != 0.0 {
                    axpy(grads.head.proj.row_mut(o), g, &pooled);
                    axpy(&mut d_pooled, g, head.proj.row(o));
                }
            }
            let mut d_enc_out = Mat::zeros(enc_out.rows, enc_out.cols);
            let inv = 1.0 / enc_out.rows as f64;
            for i in 0..enc_out.rows {
                axpy(d_enc_out.row_mut(i), inv, &d_pooled);
            }
            (loss, d_enc_out, None)
        }
        Target::Tokens(target_ids) => {
            let dec_ids = decoder_input_ids(target_ids);
            let y0 = embed_decoder_input(backbone, &dec_ids);
            let (states, dec_stack) = decode(backbone, &enc_out, y0);
            let logits = linear(&states, &head.proj);
            let m = target_ids.len() as f64;
            let mut loss = 0.0;
            let mut d_logits = Mat::zeros(logits.rows, logits.cols);
            for (pos, &t) in target_ids.iter().enumerate() {
                let row = logits.row(pos);
                loss += log_sum_exp(row) - row[t as usize];
                let d_row = d_logits.row_mut(pos);
                d_row.copy_from_slice(row);
                softmax_inplace(d_row);
                d_row[t as usize] -= 1.0;
                let scale = weight / m;
                d_row.iter_mut().for_each(|v| *v *= scale);
            }
            loss /= m;
            let d_states = linear_backward(&d_logits, &states, &head.proj, &mut grads.head.proj);
            let (d_y0, d_enc_out) =
                decode_backward(&d_states, &dec_stack, &enc_out, backbone, &mut grads.backbone);
            scatter_sequence_grads(&d_y0, &dec_ids, 0, &mut grads.backbone.embedding, None);
            (loss, d_enc_out, Some(()))
        }
    };
    let _ = dec_part;

    let d_x0 = encode_backward(&d_enc_out, &enc_stack, backbone, &mut grads.backbone);
    scatter_sequence_grads(
        &d_x0,
        input_ids,
        prompt_rows,
        &mut grads.backbone.embedding,
        used_prompt.map(|_| &mut grads.prompt.vectors),
    );
    Ok(loss)
}

/// Greedy decode until `</s>` or `max_len` tokens.
pub fn generate(
    backbone: &Backbone,
    head: &OutputHead,
    prompt: &SoftPrompt,
    paradigm: Paradigm,
    input_ids: &[u32],
    max_len: usize,
) -> Result<Vec<u32>, ModelError> {
    if !paradigm.uses_decoder() {
        return Err(ModelError::NotGenerative(paradigm));
    }
    if input_ids.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    check_ids(input_ids, backbone.vocab_size)?;
    let used_prompt = paradigm.uses_prompt().then_some(prompt);
    let x0 = embed_encoder_input(backbone, used_prompt, input_ids);
    let (enc_out, _) = encode(backbone, x0);
    let mut out: Vec<u32> = Vec::new();
    for _ in 0..max_len {
        let mut dec_ids = Vec::with_capacity(out.len() + 1);
        dec_ids.push(PAD);
        dec_ids.extend_from_slice(&out);
        let y0 = embed_decoder_input(backbone, &dec_ids);
        let (states, _) = decode(backbone, &enc_out, y0);
        let last = states.rows - 1;
        let logits = head_logits(states.row(last), head);
        let next = argmax(&logits) as u32;
        if next == EOS {
            break;
        }
        out.push(next);
    }
    Ok(out)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelDims;
    use crate::rng::Rng;

    fn tiny_model() -> (Backbone, OutputHead, SoftPrompt) {
        let dims = ModelDims::tiny_for_tests();
        let mut rng = Rng::new(17);
        let vocab = 24;
        let backbone = Backbone::init(dims, vocab, &mut rng);
        let head = OutputHead::init(vocab, dims.d_model, &mut rng);
        let prompt = SoftPrompt::init(dims.prompt_len, dims.d_model, &mut rng);
        (backbone, head, prompt)
    }

    #[test]
    fn uniform_head_gives_ln_vocab_loss() {
        let (backbone, _, prompt) = tiny_model();
        let head = OutputHead::zeros(backbone.vocab_size, backbone.dims.d_model);
        let out = forward(
            &backbone,
            &head,
            &prompt,
            Paradigm::PromptPlusModelTuning,
            &[7, 8, 1],
            Target::Tokens(&[9, 1]),
        )
        .unwrap();
        let expect = (backbone.vocab_size as f64).ln();
        assert!((out.loss - expect).abs() < 1e-12, "loss {}", out.loss);
        // Single-position target hits ln V exactly.
        let single = forward(
            &backbone,
            &head,
            &prompt,
            Paradigm::PromptPlusModelTuning,
            &[7, 8, 1],
            Target::Tokens(&[9]),
        )
        .unwrap();
        assert_eq!(single.loss, expect);
    }

    #[test]
    fn softmax_rows_sum_to_one_on_real_logits() {
        let (backbone, head, prompt) = tiny_model();
        let out = forward(
            &backbone,
            &head,
            &prompt,
            Paradigm::PromptTuning,
            &[7, 8, 9, 1],
            Target::Tokens(&[10, 11, 1]),
        )
        .unwrap();
        for pos in 0..out.logits.rows {
            let mut row = out.logits.row(pos).to_vec();
            softmax_inplace(&mut row);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn template_sample_loss_covers_target_sequence() {
        // Rendered-template input with a two-token sector target: the loss
        // averages over exactly the target positions.
        let text = "klarna bank ab, concerns buy-now-pay-later and shopping, is an online \
                    payment platform designed to facilitate cashless payments. sector:";
        let vocab = crate::model::vocab::Vocabulary::build([text, "financial service"], 128);
        let dims = ModelDims::tiny_for_tests();
        let mut rng = Rng::new(2);
        let backbone = Backbone::init(dims, vocab.len(), &mut rng);
        let head = OutputHead::init(vocab.len(), dims.d_model, &mut rng);
        let prompt = SoftPrompt::init(dims.prompt_len, dims.d_model, &mut rng);
        let input = vocab.encode(text, true);
        let target = vocab.encode("financial service", true);
        assert_eq!(target.len(), 3, "two name tokens plus the end marker");
        let out = forward(
            &backbone,
            &head,
            &prompt,
            Paradigm::PromptPlusModelTuning,
            &input,
            Target::Tokens(&target),
        )
        .unwrap();
        assert!(out.loss.is_finite() && out.loss > 0.0);
        assert_eq!(out.logits.rows, target.len());
        assert_eq!(out.logits.cols, vocab.len());
    }

    #[test]
    fn out_of_range_token_rejected() {
        let (backbone, head, prompt) = tiny_model();
        let err = forward(
            &backbone,
            &head,
            &prompt,
            Paradigm::ModelTuning,
            &[9999],
            Target::Tokens(&[1]),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::TokenOutOfRange { .. }));
    }

    #[test]
    fn empty_target_rejected() {
        let (backbone, head, prompt) = tiny_model();
        let err = forward(
            &backbone,
            &head,
            &prompt,
            Paradigm::ModelTuning,
            &[7],
            Target::Tokens(&[]),
        )
        .unwrap_err();
        assert_eq!(err, ModelError::EmptyTarget);
    }

    #[test]
    fn batched_loss_equals_mean_of_singles() {
        let (backbone, head, prompt) = tiny_model();
        let samples: Vec<(Vec<u32>, Vec<u32>)> = vec![
            (vec![7, 8, 1], vec![9, 1]),
            (vec![10, 11, 12, 1], vec![13, 1]),
            (vec![14, 1], vec![15, 16, 1]),
        ];
        let mut grads = Gradients::zeros_like(&backbone, &head, &prompt);
        let weight = 1.0 / samples.len() as f64;
        let mut batch_loss = 0.0;
        for (input, target) in &samples {
            batch_loss += weight
                * forward_backward(
                    &backbone,
                    &head,
                    &prompt,
                    Paradigm::PromptPlusModelTuning,
                    input,
                    Target::Tokens(target),
                    &mut grads,
                    weight,
                )
                .unwrap();
        }
        let mean_single: f64 = samples
            .iter()
            .map(|(input, target)| {
                forward(
                    &backbone,
                    &head,
                    &prompt,
                    Paradigm::PromptPlusModelTuning,
                    input,
                    Target::Tokens(target),
                )
                .unwrap()
                .loss
            })
            .sum::<f64>()
            / samples.len() as f64;
        assert!((batch_loss - mean_single).abs() < 1e-12);
    }

    #[test]
    fn prompt_changes_outputs_only_when_used() {
        let (backbone, head, prompt) = tiny_model();
        let mut other_prompt = prompt.clone();
        other_prompt.vectors.data[0] += 1.0;
        let input = [7, 8, 1];
        let target = [9, 1];
        for (paradigm, expect_same) in [
            (Paradigm::Prompting, true),
            (Paradigm::ModelTuning, true),
            (Paradigm::PromptTuning, false),
            (Paradigm::PromptPlusModelTuning, false),
        ] {
            let a = forward(&backbone, &head, &prompt, paradigm, &input, Target::Tokens(&target))
                .unwrap()
                .loss;
            let b = forward(
                &backbone,
                &head,
                &other_prompt,
                paradigm,
                &input,
                Target::Tokens(&target),
            )
            .unwrap()
            .loss;
            assert_eq!(a == b, expect_same, "paradigm {paradigm:?}");
        }
    }

    #[test]
    fn generate_respects_max_len_and_determinism() {
        let (backbone, head, prompt) = tiny_model();
        let out1 = generate(&backbone, &head, &prompt, Paradigm::PromptTuning, &[7, 8, 1], 5)
            .unwrap();
        let out2 = generate(&backbone, &head, &prompt, Paradigm::PromptTuning, &[7, 8, 1], 5)
            .unwrap();
        assert_eq!(out1, out2);
        assert!(out1.len() <= 5);
    }

    #[test]
    fn mway_forward_has_class_logits() {
        let dims = ModelDims::tiny_for_tests();
        let mut rng = Rng::new(3);
        let backbone = Backbone::init(dims, 24, &mut rng);
        let head = OutputHead::init(5, dims.d_model, &mut rng);
        let prompt = SoftPrompt::init(dims.prompt_len, dims.d_model, &mut rng);
        let out = forward(
            &backbone,
            &head,
            &prompt,
            Paradigm::MWayClassification,
            &[7, 8, 1],
            Target::Class(2),
        )
        .unwrap();
        assert_eq!(out.logits.cols, 5);
        assert!(out.loss >= 0.0);
        let err = generate(
            &backbone,
            &head,
            &prompt,
            Paradigm::MWayClassification,
            &[7, 1],
            4,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::NotGenerative(_)));
    }

    /// Full-model gradient check on the tiny architecture, all three groups.
    #[test]
    fn gradients_match_finite_differences_tiny() {
        let (mut backbone, mut head, mut prompt) = tiny_model();
        let input = [7, 8, 9, 1];
        let target = [10, 11, 1];
        let paradigm = Paradigm::PromptPlusModelTuning;
        let mut grads = Gradients::zeros_like(&backbone, &head, &prompt);
        forward_backward(
            &backbone,
            &head,
            &prompt,
            paradigm,
            &input,
            Target::Tokens(&target),
            &mut grads,
            1.0,
        )
        .unwrap();
        let h = 1e-5;
        let mut rng = Rng::new(5);
        let loss_at = |backbone: &Backbone, head: &OutputHead, prompt: &SoftPrompt| -> f64 {
            forward(backbone, head, prompt, paradigm, &input, Target::Tokens(&target))
                .unwrap()
                .loss
        };
        let mut max_rel: f64 = 0.0;
        // Backbone coordinates.
        for _ in 0..60 {
            let mat_count = backbone.mats().len();
            let mi = rng.below(mat_count);
            let len = backbone.mats()[mi].data.len();
            let ci = rng.below(len);
            let orig = backbone.mats()[mi].data[ci];
            backbone.mats_mut()[mi].data[ci] = orig + h;
            let up = loss_at(&backbone, &head, &prompt);
            backbone.mats_mut()[mi].data[ci] = orig - h;
            let down = loss_at(&backbone, &head, &prompt);
            backbone.mats_mut()[mi].data[ci] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.backbone.mats()[mi].data[ci];
            max_rel = max_rel.max(rel_err(analytic, numeric));
        }
        // Head + prompt coordinates.
        for _ in 0..40 {
            let ci = rng.below(head.proj.data.len());
            let orig = head.proj.data[ci];
            head.proj.data[ci] = orig + h;
            let up = loss_at(&backbone, &head, &prompt);
            head.proj.data[ci] = orig - h;
            let down = loss_at(&backbone, &head, &prompt);
            head.proj.data[ci] = orig;
            max_rel = max_rel.max(rel_err(grads.head.proj.data[ci], (up - down) / (2.0 * h)));
        }
        for _ in 0..40 {
            let ci = rng.below(prompt.vectors.data.len());
            let orig = prompt.vectors.data[ci];
            prompt.vectors.data[ci] = orig + h;
            let up = loss_at(&backbone, &head, &prompt);
            prompt.vectors.data[ci] = orig - h;
            let down = loss_at(&backbone, &head, &prompt);
            prompt.vectors.data[ci] = orig;
            max_rel = max_rel.max(rel_err(grads.prompt.vectors.data[ci], (up - down) / (2.0 * h)));
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    fn rel_err(analytic: f64, numeric: f64) -> f64 {
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        (analytic - numeric).abs() / denom
    }
}
