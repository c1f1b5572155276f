//! Self-contained industry-sector inference pipeline: a dynamic hierarchical
//! sector framework with evolving company annotations, bottom-up annotation
//! attribution, EDA sample balancing, a small generative text model trained
//! with two-phase prompt-and-backbone tuning, QA-gated releases, and
//! incremental batch inference driven by rule-based change inspection.

pub mod attribution;
pub mod augment;
pub mod company;
pub mod config;
pub mod eval;
pub mod framework;
pub mod inference;
pub mod model;
pub mod orchestrator;
pub mod persistence;
pub mod rng;
pub mod synth;

#[cfg(test)]
pub(crate) mod testutil;
