//! Two-phase learning-rate schedule with linear warmups: a frozen-backbone
//! phase at the first rate, then a joint phase re-warmed to the second rate.

use crate::model::trainer::TrainConfig;

/// Learning rate at a 1-based step.
///
/// Phase 1 (step <= freeze_steps): linear 0 -> lr_frozen over
/// `warmup_frozen` steps, then flat. Phase 2 (step > freeze_steps): linear
/// 0 -> lr_joint over `warmup_joint` steps starting at freeze_steps + 1,
/// then flat.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    debug_assert!(step >= 1);
    if step <= config.freeze_steps {
        if config.warmup_frozen == 0 || step >= config.warmup_frozen {
            config.lr_frozen
        } else {
            config.lr_frozen * step as f64 / config.warmup_frozen as f64
        }
    } else {
        let into_phase = step - config.freeze_steps;
        if config.warmup_joint == 0 || into_phase >= config.warmup_joint {
            config.lr_joint
        } else {
            config.lr_joint * into_phase as f64 / config.warmup_joint as f64
        }
    }
}
