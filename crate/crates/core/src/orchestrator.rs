//! Daily rule-based inspection and the finetune workflow it drives:
//! attribution, balancing, a 9:1 split, two-phase training, QA gating, and
//! checkpoint release, plus the tick entry point that also runs the
//! incremental inference pass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{attribute, build_training_set};
use crate::augment::{balance, AugmentError, SynonymLexicon};
use crate::company::{BaselineSnapshot, ChangeSignal, CompanyStore, FilledSample, Timestamp};
use crate::eval::{confusion, metrics, qa_gate, EvalError, QaAssertion, QaVerdict, SectorMetrics};
use crate::framework::SectorTree;
use crate::inference::{
    infer_batch, publish, select_companies, InferenceError, InferenceLedger,
};
use crate::model::{
    build_checkpoint, forward, generate, pretrain, train, Backbone, Checkpoint, CheckpointError,
    EncodedSample, ModelDims, ModelError, OutputHead, Paradigm, PretrainConfig, PretrainedBase,
    SoftPrompt, Target, TrainConfig, TrainingHistory, Vocabulary,
};
use crate::persistence::{write_atomic, AppendLog, ModelRegistry, SnapshotStore, StoreError};
use crate::rng::{mix_seed, Rng};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("attribution produced no eligible sectors (threshold {threshold})")]
    NoEligibleSectors { threshold: usize },
    #[error("no released model available")]
    NoModel,
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("state decode failed: {0}")]
    StateDecode(String),
    #[error("invalid pipeline config: {0}")]
    BadConfig(String),
}

/// What the daily inspection compares against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionState {
    pub last_full_finetune_at: Timestamp,
    pub baseline: BaselineSnapshot,
    pub framework_fingerprint: String,
    pub current_model_version: Option<String>,
}

impl InspectionState {
    /// Cold-start state: nothing trained yet, so the first inspection will
    /// escalate to a full finetune.
    pub fn bootstrap() -> Self {
        InspectionState {
            last_full_finetune_at: Timestamp(0),
            baseline: BaselineSnapshot {
                taken_at: Timestamp(0),
                event_cursor: 0,
                sectors: Default::default(),
            },
            framework_fingerprint: String::new(),
            current_model_version: None,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(self).expect("state serializes");
        write_atomic(path, &bytes)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, OrchestratorError> {
        let bytes = std::fs::read(path).map_err(|e| {
            OrchestratorError::Store(StoreError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })?;
        serde_json::from_slice(&bytes).map_err(|e| OrchestratorError::StateDecode(e.to_string()))
    }

    pub fn load_or_bootstrap(path: &std::path::Path) -> Result<Self, OrchestratorError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::bootstrap())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Change ratio at or above which a sector forces a full finetune.
    pub significant: f64,
    /// Change ratio at or above which an incremental finetune runs.
    pub marginal: f64,
    /// Days after which a pending incremental escalates to full.
    pub force_days: i64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            significant: 0.75,
            marginal: 0.1,
            force_days: 90,
        }
    }
}

/// Scenario severity orders Skip < Incremental < Full.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Scenario {
    SkipFinetune,
    IncrementalFinetune,
    FullFinetune,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::SkipFinetune => "skip-finetune",
            Scenario::IncrementalFinetune => "incremental-finetune",
            Scenario::FullFinetune => "full-finetune",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriggerKind {
    FrameworkChanged,
    NewSector,
    SignificantChange,
    MarginalChange,
    AgeEscalation,
    /// Operator-forced run (CLI `train`).
    Manual,
}

impl TriggerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::FrameworkChanged => "framework-changed",
            TriggerKind::NewSector => "new-sector",
            TriggerKind::SignificantChange => "significant-change",
            TriggerKind::MarginalChange => "marginal-change",
            TriggerKind::AgeEscalation => "age-escalation",
            TriggerKind::Manual => "manual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub kind: TriggerKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDecision {
    pub scenario: Scenario,
    pub reasons: Vec<Trigger>,
}

impl ScenarioDecision {
    pub fn describe_reasons(&self) -> String {
        if self.reasons.is_empty() {
            return "none".to_string();
        }
        self.reasons
            .iter()
            .map(|t| format!("{}: {}", t.kind.as_str(), t.detail))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// The pure daily decision: full finetune on framework change, new sectors,
/// or significant annotation churn; incremental on marginal churn (escalated
/// to full past the age bound); skip otherwise.
pub fn inspect(
    state: &InspectionState,
    store: &CompanyStore,
    tree: &SectorTree,
    now: Timestamp,
    thresholds: &Thresholds,
) -> ScenarioDecision {
    let mut full = Vec::new();
    let mut marginal = Vec::new();

    if state.framework_fingerprint != tree.fingerprint() {
        full.push(Trigger {
            kind: TriggerKind::FrameworkChanged,
            detail: format!(
                "fingerprint {} -> {}",
                short(&state.framework_fingerprint),
                short(tree.fingerprint())
            ),
        });
    }

    for id in tree.depth_first_index() {
        match store.change_ratio(&id, &state.baseline) {
            ChangeSignal::NewSector => {
                // Only meaningful when the sector actually has annotations.
                if !store.active_members(&id).is_empty() {
                    full.push(Trigger {
                        kind: TriggerKind::NewSector,
                        detail: id.to_string(),
                    });
                }
            }
            ChangeSignal::Ratio(ratio) => {
                if ratio >= thresholds.significant {
                    full.push(Trigger {
                        kind: TriggerKind::SignificantChange,
                        detail: format!("{id} ratio {ratio:.3}"),
                    });
                } else if ratio >= thresholds.marginal {
                    marginal.push(Trigger {
                        kind: TriggerKind::MarginalChange,
                        detail: format!("{id} ratio {ratio:.3}"),
                    });
                }
            }
        }
    }

    if !full.is_empty() {
        return ScenarioDecision {
            scenario: Scenario::FullFinetune,
            reasons: full,
        };
    }
    if !marginal.is_empty() {
        let age_days = now.days_since(state.last_full_finetune_at);
        if age_days >= thresholds.force_days {
            marginal.push(Trigger {
                kind: TriggerKind::AgeEscalation,
                detail: format!("{age_days} days since last full finetune"),
            });
            return ScenarioDecision {
                scenario: Scenario::FullFinetune,
                reasons: marginal,
            };
        }
        return ScenarioDecision {
            scenario: Scenario::IncrementalFinetune,
            reasons: marginal,
        };
    }
    ScenarioDecision {
        scenario: Scenario::SkipFinetune,
        reasons: Vec::new(),
    }
}

fn short(fingerprint: &str) -> &str {
    if fingerprint.is_empty() {
        "<none>"
    } else {
        &fingerprint[..fingerprint.len().min(8)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub attribution_threshold: usize,
    pub thresholds: Thresholds,
    pub dims: ModelDims,
    pub train: TrainConfig,
    /// Step budget for incremental finetunes; must stay within a seventh of
    /// the full budget.
    pub incremental_steps: usize,
    pub incremental_warmup: usize,
    pub pretrain: PretrainConfig,
    pub augment_seed: u64,
    pub shuffle_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        PipelineConfig {
            attribution_threshold: 20,
            thresholds: Thresholds::default(),
            dims: ModelDims::default(),
            incremental_steps: train.total_steps / 8,
            incremental_warmup: 100,
            pretrain: PretrainConfig::default(),
            augment_seed: 0,
            shuffle_seed: 0,
            train,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.attribution_threshold == 0 {
            return Err(OrchestratorError::BadConfig(
                "attribution threshold must be >= 1".to_string(),
            ));
        }
        if self.incremental_steps * 7 > self.train.total_steps {
            return Err(OrchestratorError::BadConfig(format!(
                "incremental budget {} exceeds a seventh of the full budget {}",
                self.incremental_steps, self.train.total_steps
            )));
        }
        self.train
            .validate()
            .map_err(|e| OrchestratorError::BadConfig(e.to_string()))
    }

    fn incremental_train(&self) -> TrainConfig {
        TrainConfig {
            total_steps: self.incremental_steps,
            freeze_steps: 0,
            warmup_frozen: 0,
            warmup_joint: self.incremental_warmup,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FinetuneOutcome {
    Released {
        version: String,
        validation_accuracy: f64,
        scenario: Scenario,
    },
    QaBlocked {
        violations: Vec<String>,
        validation_accuracy: f64,
    },
}

impl FinetuneOutcome {
    pub fn released_version(&self) -> Option<&str> {
        match self {
            FinetuneOutcome::Released { version, .. } => Some(version),
            FinetuneOutcome::QaBlocked { .. } => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            FinetuneOutcome::Released {
                version,
                validation_accuracy,
                ..
            } => format!("released {version} (val acc {validation_accuracy:.3})"),
            FinetuneOutcome::QaBlocked { violations, .. } => {
                format!("qa-blocked ({} violations)", violations.len())
            }
        }
    }
}

/// Encode filled samples against a vocabulary and label space.
pub fn encode_dataset(
    samples: &[FilledSample],
    vocab: &Vocabulary,
    sector_names: &[String],
) -> Vec<EncodedSample> {
    samples
        .iter()
        .map(|s| EncodedSample {
            input_ids: vocab.encode(&s.input_text, true),
            target_ids: vocab.encode(&s.target_text, true),
            class_index: sector_names
                .iter()
                .position(|n| *n == s.target_text)
                .unwrap_or(0),
        })
        .collect()
}

/// Predicted sector names for a batch of encoded samples.
#[allow(clippy::too_many_arguments)]
pub fn predict_names(
    backbone: &Backbone,
    head: &OutputHead,
    prompt: &SoftPrompt,
    paradigm: Paradigm,
    samples: &[EncodedSample],
    vocab: &Vocabulary,
    sector_names: &[String],
    max_len: usize,
) -> Result<Vec<String>, ModelError> {
    let mut out = Vec::with_capacity(samples.len());
    for sample in samples {
        if paradigm.uses_decoder() {
            let ids = generate(backbone, head, prompt, paradigm, &sample.input_ids, max_len)?;
            out.push(vocab.decode(&ids));
        } else {
            let outcome = forward(
                backbone,
                head,
                prompt,
                paradigm,
                &sample.input_ids,
                Target::Class(sample.class_index),
            )?;
            let row = outcome.logits.row(0);
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (i, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            out.push(sector_names.get(best).cloned().unwrap_or_default());
        }
    }
    Ok(out)
}

/// Everything run_finetune produces besides the release decision, kept for
/// reporting.
#[derive(Debug)]
pub struct FinetuneReport {
    pub outcome: FinetuneOutcome,
    pub metrics: SectorMetrics,
    pub history: TrainingHistory,
    pub eligible_sectors: Vec<String>,
    pub train_samples: usize,
    pub validation_samples: usize,
}

/// The finetune workflow: attribution, training-set build, balancing, 9:1
/// shuffle-split, training (full from the pretrained backbone, incremental
/// from the released checkpoint), validation metrics, QA gate, release.
#[allow(clippy::too_many_arguments)]
pub fn run_finetune(
    decision: &ScenarioDecision,
    tree: &SectorTree,
    store: &CompanyStore,
    state: &mut InspectionState,
    registry: &ModelRegistry,
    alert_log: &mut AppendLog,
    assertions: &[QaAssertion],
    lexicon: &SynonymLexicon,
    config: &PipelineConfig,
    now: Timestamp,
) -> Result<FinetuneReport, OrchestratorError> {
    config.validate()?;
    debug_assert_ne!(decision.scenario, Scenario::SkipFinetune);

    let attribution = attribute(tree, store, config.attribution_threshold);
    if attribution.eligible.is_empty() {
        return Err(OrchestratorError::NoEligibleSectors {
            threshold: config.attribution_threshold,
        });
    }
    let training_set = build_training_set(&attribution, store, tree);
    let sector_names: Vec<String> = training_set
        .per_sector
        .iter()
        .map(|s| s.sector_name.clone())
        .collect();

    let balanced = balance(&training_set.per_sector, lexicon, config.augment_seed)?;
    let mut samples: Vec<FilledSample> = balanced
        .iter()
        .flat_map(|s| s.samples.iter().cloned())
        .collect();
    let mut rng = Rng::new(mix_seed(&[config.shuffle_seed, 0x73706c69]));
    rng.shuffle(&mut samples);
    let mut split = samples.len() - samples.len() / 10;
    if split == samples.len() && samples.len() >= 2 {
        split -= 1;
    }
    let (train_samples, val_samples) = samples.split_at(split);

    // Parameter initialization per scenario.
    let incremental = decision.scenario == Scenario::IncrementalFinetune;
    let (vocab, backbone, warm_head, warm_prompt, train_config) = if incremental {
        let (_, bytes) = registry
            .load_current()?
            .ok_or(OrchestratorError::NoModel)?;
        let ckpt = Checkpoint::from_bytes(&bytes)?;
        (
            ckpt.vocab,
            ckpt.backbone,
            Some(ckpt.head),
            Some(ckpt.prompt),
            config.incremental_train(),
        )
    } else if let Some(bytes) = registry.load_base()? {
        let base = PretrainedBase::from_bytes(&bytes)?;
        (base.vocab, base.backbone, None, None, config.train.clone())
    } else {
        // No published base: pretrain in-process on the unlabeled inputs.
        let vocab = build_vocab(&samples, &sector_names, config.dims.vocab_cap);
        let corpus: Vec<Vec<u32>> = samples
            .iter()
            .map(|s| vocab.encode(&s.input_text, false))
            .collect();
        let (backbone, _) = pretrain(&corpus, config.dims, vocab.len(), &config.pretrain)?;
        (vocab, backbone, None, None, config.train.clone())
    };

    let train_encoded = encode_dataset(train_samples, &vocab, &sector_names);
    let val_encoded = encode_dataset(val_samples, &vocab, &sector_names);

    let outcome = train(
        backbone,
        warm_head,
        warm_prompt,
        &train_encoded,
        &val_encoded,
        &vocab,
        sector_names.len(),
        &train_config,
    )?;

    // Validation metrics for the QA gate.
    let max_len = sector_names
        .iter()
        .map(|n| n.split_whitespace().count())
        .max()
        .unwrap_or(4)
        + 2;
    let preds = predict_names(
        &outcome.backbone,
        &outcome.head,
        &outcome.prompt,
        train_config.paradigm,
        &val_encoded,
        &vocab,
        &sector_names,
        max_len,
    )?;
    let golds: Vec<String> = val_samples.iter().map(|s| s.target_text.clone()).collect();
    let matrix = confusion(&golds, &preds, &sector_names)?;
    let sector_metrics = metrics(&matrix);

    let checkpoint = build_checkpoint(
        train_config,
        vocab,
        outcome.backbone,
        outcome.head,
        outcome.prompt,
        sector_names.clone(),
        outcome.history.best_step,
        outcome.history.best_accuracy,
        now,
    );
    let version = checkpoint.version();

    let verdict = qa_gate(&sector_metrics, assertions, alert_log, &version, now)?;
    let finetune_outcome = match verdict {
        QaVerdict::Pass => {
            registry.install(&version, &checkpoint.to_bytes())?;
            state.baseline = store.snapshot_baseline(tree, now);
            state.framework_fingerprint = tree.fingerprint().to_string();
            state.current_model_version = Some(version.clone());
            if decision.scenario == Scenario::FullFinetune {
                state.last_full_finetune_at = now;
            }
            FinetuneOutcome::Released {
                version,
                validation_accuracy: outcome.history.best_accuracy,
                scenario: decision.scenario,
            }
        }
        QaVerdict::Fail(violations) => FinetuneOutcome::QaBlocked {
            violations: violations.iter().map(|v| v.assertion.clone()).collect(),
            validation_accuracy: outcome.history.best_accuracy,
        },
    };

    Ok(FinetuneReport {
        outcome: finetune_outcome,
        metrics: sector_metrics,
        history: outcome.history,
        eligible_sectors: sector_names,
        train_samples: train_encoded.len(),
        validation_samples: val_encoded.len(),
    })
}

pub fn build_vocab(samples: &[FilledSample], sector_names: &[String], cap: usize) -> Vocabulary {
    let mut texts: Vec<&str> = Vec::with_capacity(samples.len() + sector_names.len());
    for s in samples {
        texts.push(&s.input_text);
    }
    for name in sector_names {
        texts.push(name.as_str());
    }
    Vocabulary::build(texts, cap)
}

/// Mutable environment a tick writes to.
pub struct TickEnv<'a> {
    pub registry: &'a ModelRegistry,
    pub alert_log: &'a mut AppendLog,
    pub journal: &'a mut AppendLog,
    pub prediction_store: &'a SnapshotStore,
    pub prediction_events: &'a mut AppendLog,
    pub ledger: &'a mut InferenceLedger,
}

#[derive(Debug)]
pub struct TickOutcome {
    pub decision: ScenarioDecision,
    pub finetune: Option<FinetuneOutcome>,
    pub selected: usize,
    pub published: usize,
    pub model_version: Option<String>,
}

/// One daily cycle: inspect, run the chosen scenario, then the incremental
/// inference pass with whatever model is current, journaling the outcome.
#[allow(clippy::too_many_arguments)]
pub fn tick(
    state: &mut InspectionState,
    tree: &SectorTree,
    store: &CompanyStore,
    env: &mut TickEnv<'_>,
    assertions: &[QaAssertion],
    lexicon: &SynonymLexicon,
    config: &PipelineConfig,
    now: Timestamp,
) -> Result<TickOutcome, OrchestratorError> {
    let decision = inspect(state, store, tree, now, &config.thresholds);
    let finetune = match decision.scenario {
        Scenario::SkipFinetune => None,
        _ => Some(
            run_finetune(
                &decision,
                tree,
                store,
                state,
                env.registry,
                env.alert_log,
                assertions,
                lexicon,
                config,
                now,
            )?
            .outcome,
        ),
    };

    // Inference pass with the (possibly just released) current model.
    let mut selected = 0usize;
    let mut published = 0usize;
    if let Some((version, bytes)) = env.registry.load_current()? {
        let checkpoint = Checkpoint::from_bytes(&bytes)?;
        let chosen = select_companies(store, env.ledger, &version);
        selected = chosen.len();
        if selected > 0 {
            let companies: Vec<_> = chosen
                .iter()
                .filter_map(|id| store.company(id))
                .collect();
            let records = infer_batch(&checkpoint, &companies, tree, env.ledger, now)?;
            let ack = publish(&records, env.prediction_store, env.prediction_events)?;
            published = ack.persisted;
        }
    }

    let model_version = state.current_model_version.clone();
    let outcome_text = finetune
        .as_ref()
        .map(|f| f.describe())
        .unwrap_or_else(|| format!("inference-only ({selected} selected, {published} published)"));
    env.journal.append(&[
        &now.to_string(),
        decision.scenario.as_str(),
        &decision.describe_reasons(),
        &outcome_text,
        model_version.as_deref().unwrap_or("-"),
    ])?;

    Ok(TickOutcome {
        decision,
        finetune,
        selected,
        published,
        model_version,
    })
}
