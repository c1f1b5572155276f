//! The two-phase trainer: soft prompts and head first, backbone joining
//! after the freeze horizon, with early stopping on validation accuracy.
//! Also the span-corruption pretrainer that stands in for a published
//! checkpoint, and the finite-difference gradient checker.

use serde::{Deserialize, Serialize};

use crate::model::mat::Mat;
use crate::model::net::{
    forward, forward_backward, generate, Gradients, ModelError, Paradigm, Target,
};
use crate::model::params::{Backbone, ModelDims, OutputHead, SoftPrompt};
use crate::model::schedule::lr_at;
use crate::model::vocab::{Vocabulary, EOS, SENTINELS};
use crate::rng::{mix_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: usize,
    /// Steps with the backbone frozen before joint tuning begins.
    pub freeze_steps: usize,
    /// Rate during the frozen phase.
    pub lr_frozen: f64,
    /// Rate during the joint phase.
    pub lr_joint: f64,
    pub warmup_frozen: usize,
    pub warmup_joint: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub paradigm: Paradigm,
    /// Early stopping: give up after this many evaluations without
    /// improvement.
    pub patience: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 1_000_000,
            freeze_steps: 3_000,
            lr_frozen: 0.1,
            lr_joint: 5e-3,
            warmup_frozen: 1_000,
            warmup_joint: 1_500,
            batch_size: 50,
            seed: 0,
            paradigm: Paradigm::PromptPlusModelTuning,
            patience: 5,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.freeze_steps > self.total_steps {
            return Err(ModelError::BadConfig(
                "freeze_steps must not exceed total_steps".to_string(),
            ));
        }
        if self.lr_frozen <= 0.0 || self.lr_joint <= 0.0 {
            return Err(ModelError::BadConfig(
                "learning rates must be positive".to_string(),
            ));
        }
        if self.warmup_frozen > self.freeze_steps {
            return Err(ModelError::BadConfig(
                "warmup_frozen must not exceed freeze_steps".to_string(),
            ));
        }
        if self.batch_size == 0 {
            return Err(ModelError::BadConfig("batch_size must be nonzero".to_string()));
        }
        if self.eval_every == 0 {
            return Err(ModelError::BadConfig("eval_every must be nonzero".to_string()));
        }
        Ok(())
    }
}

/// One encoded training sample. `class_index` feeds the discriminative
/// baseline; generative paradigms use `target_ids`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSample {
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub class_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub losses: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    pub best_step: usize,
    pub best_accuracy: f64,
    pub stopped_early: bool,
}

pub struct TrainOutcome {
    pub backbone: Backbone,
    pub head: OutputHead,
    pub prompt: SoftPrompt,
    pub history: TrainingHistory,
}

fn sgd_apply(params: &mut Backbone, grads: &Backbone, lr: f64) {
    for (p, g) in params.mats_mut().into_iter().zip(grads.mats()) {
        p.sgd_step(g, lr);
    }
}

/// Exact-match validation accuracy: generated sector text vs target text
/// for generative paradigms, argmax class for the discriminative baseline.
pub fn validation_accuracy(
    backbone: &Backbone,
    head: &OutputHead,
    prompt: &SoftPrompt,
    paradigm: Paradigm,
    validation: &[EncodedSample],
    vocab: &Vocabulary,
    max_target_len: usize,
) -> Result<f64, ModelError> {
    if validation.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for sample in validation {
        let hit = if paradigm.uses_decoder() {
            let out = generate(
                backbone,
                head,
                prompt,
                paradigm,
                &sample.input_ids,
                max_target_len,
            )?;
            vocab.decode(&out) == vocab.decode(&sample.target_ids)
        } else {
            let outcome = forward(
                backbone,
                head,
                prompt,
                paradigm,
                &sample.input_ids,
                Target::Class(sample.class_index),
            )?;
            argmax_row(&outcome.logits) == sample.class_index
        };
        if hit {
            correct += 1;
        }
    }
    Ok(correct as f64 / validation.len() as f64)
}

fn argmax_row(logits: &Mat) -> usize {
    let row = logits.row(0);
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

fn target_of(sample: &EncodedSample, paradigm: Paradigm) -> Target<'_> {
    if paradigm.uses_decoder() {
        Target::Tokens(&sample.target_ids)
    } else {
        Target::Class(sample.class_index)
    }
}

/// Train head (and prompt / backbone per paradigm) with mini-batch SGD on
/// the two-phase schedule; early stopping returns the best checkpoint by
/// validation accuracy.
///
/// Head and prompt initialize randomly unless warm-start values are given
/// (incremental finetunes resume from the released checkpoint). A warm
/// head whose shape no longer fits the task falls back to random init.
#[allow(clippy::too_many_arguments)]
pub fn train(
    backbone: Backbone,
    warm_head: Option<OutputHead>,
    warm_prompt: Option<SoftPrompt>,
    dataset: &[EncodedSample],
    validation: &[EncodedSample],
    vocab: &Vocabulary,
    n_classes: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let dims = backbone.dims;
    let mut rng = Rng::new(mix_seed(&[config.seed, 0x7261696e]));
    let head_rows = if config.paradigm.uses_decoder() {
        backbone.vocab_size
    } else {
        n_classes.max(1)
    };
    let mut head = warm_head
        .filter(|h| h.proj.rows == head_rows && h.proj.cols == dims.d_model)
        .unwrap_or_else(|| OutputHead::init(head_rows, dims.d_model, &mut rng));
    let mut prompt = warm_prompt
        .filter(|p| p.vectors.rows == dims.prompt_len && p.vectors.cols == dims.d_model)
        .unwrap_or_else(|| SoftPrompt::init(dims.prompt_len, dims.d_model, &mut rng));
    let mut backbone = backbone;

    let max_target_len = dataset
        .iter()
        .chain(validation)
        .map(|s| s.target_ids.len())
        .max()
        .unwrap_or(4)
        + 2;

    let mut history = TrainingHistory::default();
    let mut best: Option<(Backbone, OutputHead, SoftPrompt)> = None;
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut best_step = 0;
    let mut evals_since_best = 0usize;

    let mut grads = Gradients::zeros_like(&backbone, &head, &prompt);

    let mut step = 0usize;
    while step < config.total_steps {
        step += 1;
        grads.zero_out();
        let weight = 1.0 / config.batch_size as f64;
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_size {
            let sample = &dataset[rng.below(dataset.len())];
            let loss = forward_backward(
                &backbone,
                &head,
                &prompt,
                config.paradigm,
                &sample.input_ids,
                target_of(sample, config.paradigm),
                &mut grads,
                weight,
            )?;
            batch_loss += loss * weight;
        }
        if !batch_loss.is_finite() {
            return Err(ModelError::Diverged {
                step,
                loss: batch_loss,
            });
        }
        history.losses.push(batch_loss);

        let lr = lr_at(step, config);
        head.proj.sgd_step(&grads.head.proj, lr);
        if config.paradigm.updates_prompt() {
            prompt.vectors.sgd_step(&grads.prompt.vectors, lr);
        }
        if config.paradigm.updates_backbone(step, config.freeze_steps) {
            sgd_apply(&mut backbone, &grads.backbone, lr);
        }

        let at_eval = step.is_multiple_of(config.eval_every) || step == config.total_steps;
        if at_eval {
            let accuracy = validation_accuracy(
                &backbone,
                &head,
                &prompt,
                config.paradigm,
                validation,
                vocab,
                max_target_len,
            )?;
            history.evals.push(EvalPoint { step, accuracy });
            if accuracy > best_accuracy {
                best_accuracy = accuracy;
                best_step = step;
                best = Some((backbone.clone(), head.clone(), prompt.clone()));
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
                if evals_since_best >= config.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }

    let (backbone, head, prompt) = match best {
        Some(checkpoint) if !validation.is_empty() => checkpoint,
        _ => (backbone, head, prompt),
    };
    history.best_step = best_step;
    history.best_accuracy = if best_accuracy.is_finite() {
        best_accuracy
    } else {
        0.0
    };
    Ok(TrainOutcome {
        backbone,
        head,
        prompt,
        history,
    })
}

// ---- pretraining surrogate ---------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub seed: u64,
    /// Fraction of tokens masked into spans.
    pub corruption_rate: f64,
    pub mean_span: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 400,
            batch_size: 8,
            lr: 5e-3,
            warmup: 50,
            seed: 0,
            corruption_rate: 0.15,
            mean_span: 3,
        }
    }
}

/// Split a sequence into (corrupted input, span targets) for denoising.
fn corrupt_spans(tokens: &[u32], config: &PretrainConfig, rng: &mut Rng) -> (Vec<u32>, Vec<u32>) {
    let mut input = Vec::with_capacity(tokens.len());
    let mut target = Vec::new();
    let mut span_idx = 0usize;
    let mut i = 0usize;
    while i < tokens.len() {
        let start_span = span_idx < SENTINELS.len()
            && tokens.len() > 1
            && rng.uniform() < config.corruption_rate / config.mean_span as f64 * 2.0;
        if start_span {
            let max_len = (2 * config.mean_span - 1).max(1);
            let span_len = (1 + rng.below(max_len)).min(tokens.len() - i);
            let sentinel = SENTINELS[span_idx];
            span_idx += 1;
            input.push(sentinel);
            target.push(sentinel);
            target.extend_from_slice(&tokens[i..i + span_len]);
            i += span_len;
        } else {
            input.push(tokens[i]);
            i += 1;
        }
    }
    if target.is_empty() {
        // Force one masked token so every sample trains something.
        let pos = rng.below(tokens.len());
        let sentinel = SENTINELS[0];
        target.push(sentinel);
        target.push(input[pos]);
        input[pos] = sentinel;
    }
    target.push(EOS);
    input.push(EOS);
    (input, target)
}

/// Span-corruption pretraining of the backbone on an unlabeled corpus; the
/// temporary denoising head is discarded.
pub fn pretrain(
    corpus: &[Vec<u32>],
    dims: ModelDims,
    vocab_size: usize,
    config: &PretrainConfig,
) -> Result<(Backbone, Vec<f64>), ModelError> {
    if corpus.is_empty() || corpus.iter().all(|s| s.is_empty()) {
        return Err(ModelError::EmptyCorpus);
    }
    let corpus: Vec<&Vec<u32>> = corpus.iter().filter(|s| !s.is_empty()).collect();
    let mut rng = Rng::new(mix_seed(&[config.seed, 0x70726574]));
    let mut backbone = Backbone::init(dims, vocab_size, &mut rng);
    let mut head = OutputHead::init(vocab_size, dims.d_model, &mut rng);
    let prompt = SoftPrompt::init(dims.prompt_len, dims.d_model, &mut rng);
    let mut grads = Gradients::zeros_like(&backbone, &head, &prompt);
    let mut losses = Vec::with_capacity(config.steps);

    let schedule = TrainConfig {
        total_steps: config.steps.max(1),
        freeze_steps: 0,
        lr_frozen: config.lr,
        lr_joint: config.lr,
        warmup_frozen: 0,
        warmup_joint: config.warmup,
        batch_size: config.batch_size,
        seed: config.seed,
        paradigm: Paradigm::ModelTuning,
        patience: usize::MAX,
        eval_every: usize::MAX - 1,
    };

    for step in 1..=config.steps {
        grads.zero_out();
        let weight = 1.0 / config.batch_size as f64;
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_size {
            let sequence = corpus[rng.below(corpus.len())];
            let (input, target) = corrupt_spans(sequence, config, &mut rng);
            let loss = forward_backward(
                &backbone,
                &head,
                &prompt,
                Paradigm::ModelTuning,
                &input,
                Target::Tokens(&target),
                &mut grads,
                weight,
            )?;
            batch_loss += loss * weight;
        }
        if !batch_loss.is_finite() {
            return Err(ModelError::Diverged {
                step,
                loss: batch_loss,
            });
        }
        losses.push(batch_loss);
        let lr = lr_at(step, &schedule);
        sgd_apply(&mut backbone, &grads.backbone, lr);
        head.proj.sgd_step(&grads.head.proj, lr);
    }
    Ok((backbone, losses))
}

// ---- gradient checking ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub backbone_max_rel: f64,
    pub head_max_rel: f64,
    pub prompt_max_rel: f64,
}

impl GradCheckReport {
    pub fn max_rel(&self) -> f64 {
        self.backbone_max_rel
            .max(self.head_max_rel)
            .max(self.prompt_max_rel)
    }
}

// Coordinates whose true gradient sits below the floor cannot be ratioed
// against central differences (the difference is cancellation-limited near
// 1e-10 absolute); the floor turns those into an absolute check at 1e-9.
// A genuine backward defect produces errors at true-gradient scale and
// still fails loudly.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-5);
    (analytic - numeric).abs() / denom
}

/// Central finite differences vs analytic gradients on a random coordinate
/// subset of each parameter group.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    backbone: &Backbone,
    head: &OutputHead,
    prompt: &SoftPrompt,
    paradigm: Paradigm,
    input_ids: &[u32],
    target_ids: &[u32],
    h: f64,
    coords_per_group: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    let mut grads = Gradients::zeros_like(backbone, head, prompt);
    forward_backward(
        backbone,
        head,
        prompt,
        paradigm,
        input_ids,
        Target::Tokens(target_ids),
        &mut grads,
        1.0,
    )?;
    let mut backbone = backbone.clone();
    let mut head = head.clone();
    let mut prompt = prompt.clone();
    let mut rng = Rng::new(mix_seed(&[seed, 0x67726164]));

    let loss_of =
        |backbone: &Backbone, head: &OutputHead, prompt: &SoftPrompt| -> Result<f64, ModelError> {
            Ok(forward(backbone, head, prompt, paradigm, input_ids, Target::Tokens(target_ids))?
                .loss)
        };

    let mut backbone_max: f64 = 0.0;
    for _ in 0..coords_per_group {
        let mi = rng.below(backbone.mats().len());
        let ci = rng.below(backbone.mats()[mi].data.len());
        let orig = backbone.mats()[mi].data[ci];
        backbone.mats_mut()[mi].data[ci] = orig + h;
        let up = loss_of(&backbone, &head, &prompt)?;
        backbone.mats_mut()[mi].data[ci] = orig - h;
        let down = loss_of(&backbone, &head, &prompt)?;
        backbone.mats_mut()[mi].data[ci] = orig;
        backbone_max = backbone_max.max(rel_err(
            grads.backbone.mats()[mi].data[ci],
            (up - down) / (2.0 * h),
        ));
    }

    let mut head_max: f64 = 0.0;
    for _ in 0..coords_per_group {
        let ci = rng.below(head.proj.data.len());
        let orig = head.proj.data[ci];
        head.proj.data[ci] = orig + h;
        let up = loss_of(&backbone, &head, &prompt)?;
        head.proj.data[ci] = orig - h;
        let down = loss_of(&backbone, &head, &prompt)?;
        head.proj.data[ci] = orig;
        head_max = head_max.max(rel_err(grads.head.proj.data[ci], (up - down) / (2.0 * h)));
    }

    let mut prompt_max: f64 = 0.0;
    for _ in 0..coords_per_group {
        let ci = rng.below(prompt.vectors.data.len());
        let orig = prompt.vectors.data[ci];
        prompt.vectors.data[ci] = orig + h;
        let up = loss_of(&backbone, &head, &prompt)?;
        prompt.vectors.data[ci] = orig - h;
        let down = loss_of(&backbone, &head, &prompt)?;
        prompt.vectors.data[ci] = orig;
        prompt_max = prompt_max.max(rel_err(
            grads.prompt.vectors.data[ci],
            (up - down) / (2.0 * h),
        ));
    }

    Ok(GradCheckReport {
        backbone_max_rel: backbone_max,
        head_max_rel: head_max,
        prompt_max_rel: prompt_max,
    })
}
