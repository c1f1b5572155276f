//! Desk-scale generative sequence-to-sequence model with soft prompts and
//! three parameter groups, plus the discriminative baseline head.

pub mod checkpoint;
pub mod mat;
pub mod net;
pub mod params;
pub mod schedule;
pub mod trainer;
pub mod vocab;

pub use checkpoint::{build_checkpoint, version_of, Checkpoint, CheckpointError, PretrainedBase};
pub use net::{forward, forward_backward, generate, Gradients, ModelError, Paradigm, Target};
pub use params::{hash_mats, Backbone, ModelDims, OutputHead, SoftPrompt};
pub use schedule::lr_at;
pub use trainer::{
    gradient_check, pretrain, train, validation_accuracy, EncodedSample, EvalPoint,
    GradCheckReport, PretrainConfig, TrainConfig, TrainOutcome, TrainingHistory,
};
pub use vocab::{tokenize, Vocabulary, EOS, PAD, UNK};
