//! Orchestrated pipeline flows: release, QA block, incremental finetune,
//! and the daily tick loop, on a deliberately tiny model.

use tempfile::TempDir;

use sectorial_core::augment::SynonymLexicon;
use sectorial_core::company::{Company, CompanyStore, Timestamp};
use sectorial_core::eval::{Comparator, MetricKind, QaAssertion};
use sectorial_core::framework::SectorTree;
use sectorial_core::inference::InferenceLedger;
use sectorial_core::model::{ModelDims, Paradigm, PretrainConfig, TrainConfig};
use sectorial_core::orchestrator::{
    inspect, run_finetune, tick, FinetuneOutcome, InspectionState, PipelineConfig, Scenario,
    ScenarioDecision, Thresholds, TickEnv, Trigger, TriggerKind,
};
use sectorial_core::persistence::{AppendLog, ModelRegistry, SnapshotStore};
use sectorial_core::synth::{gen_corpus, SyntheticSpec};

fn small_world() -> (SectorTree, CompanyStore) {
    let spec = SyntheticSpec {
        sector_count: 2,
        group_size: 0,
        keywords_per_sector: 10,
        samples_per_sector: 25,
        description_keywords: 5,
        tags_per_company: 1,
        noise: 0.0,
    };
    let corpus = gen_corpus(&spec, 77).unwrap();
    let store = corpus.to_store(Timestamp(100));
    (corpus.tree, store)
}

fn tiny_config() -> PipelineConfig {
    PipelineConfig {
        attribution_threshold: 20,
        thresholds: Thresholds::default(),
        dims: ModelDims::tiny_for_tests(),
        train: TrainConfig {
            total_steps: 60,
            freeze_steps: 20,
            lr_frozen: 0.1,
            lr_joint: 0.01,
            warmup_frozen: 5,
            warmup_joint: 5,
            batch_size: 4,
            seed: 3,
            paradigm: Paradigm::PromptPlusModelTuning,
            patience: 50,
            eval_every: 20,
        },
        incremental_steps: 8,
        incremental_warmup: 2,
        pretrain: PretrainConfig {
            steps: 10,
            batch_size: 4,
            seed: 3,
            ..PretrainConfig::default()
        },
        augment_seed: 3,
        shuffle_seed: 3,
    }
}

struct World {
    _dir: TempDir,
    registry: ModelRegistry,
    alert_log: AppendLog,
    journal: AppendLog,
    prediction_store: SnapshotStore,
    prediction_events: AppendLog,
    ledger: InferenceLedger,
    state: InspectionState,
}

impl World {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        World {
            registry: ModelRegistry::new(dir.path().join("registry")),
            alert_log: AppendLog::open(dir.path().join("alerts.log")).unwrap(),
            journal: AppendLog::open(dir.path().join("journal.log")).unwrap(),
            prediction_store: SnapshotStore::new(dir.path().join("predictions.tsv")),
            prediction_events: AppendLog::open(dir.path().join("prediction_events.log")).unwrap(),
            ledger: InferenceLedger::new(),
            state: InspectionState::bootstrap(),
            _dir: dir,
        }
    }

    fn env(&mut self) -> TickEnv<'_> {
        TickEnv {
            registry: &self.registry,
            alert_log: &mut self.alert_log,
            journal: &mut self.journal,
            prediction_store: &self.prediction_store,
            prediction_events: &mut self.prediction_events,
            ledger: &mut self.ledger,
        }
    }
}

fn manual(scenario: Scenario) -> ScenarioDecision {
    ScenarioDecision {
        scenario,
        reasons: vec![Trigger {
            kind: TriggerKind::Manual,
            detail: "test".to_string(),
        }],
    }
}

#[test]
fn qa_pass_releases_and_resets_baseline() {
    let (tree, store) = small_world();
    let mut world = World::new();
    let config = tiny_config();
    let report = run_finetune(
        &manual(Scenario::FullFinetune),
        &tree,
        &store,
        &mut world.state,
        &world.registry,
        &mut world.alert_log,
        &[],
        &SynonymLexicon::empty(),
        &config,
        Timestamp(1_000),
    )
    .unwrap();
    let FinetuneOutcome::Released { version, .. } = &report.outcome else {
        panic!("expected release, got {:?}", report.outcome);
    };
    assert_eq!(world.registry.versions().unwrap().len(), 1);
    assert_eq!(
        world.registry.current_version().unwrap().as_deref(),
        Some(version.as_str())
    );
    assert_eq!(world.state.current_model_version.as_deref(), Some(version.as_str()));
    assert_eq!(world.state.last_full_finetune_at, Timestamp(1_000));
    assert!(world.alert_log.replay().unwrap().records.is_empty());

    // Baseline was re-snapshot: the immediate next inspection skips.
    let decision = inspect(
        &world.state,
        &store,
        &tree,
        Timestamp(1_050),
        &config.thresholds,
    );
    assert_eq!(decision.scenario, Scenario::SkipFinetune);
}

#[test]
fn qa_fail_blocks_release_and_alerts_once() {
    let (tree, store) = small_world();
    let mut world = World::new();
    let config = tiny_config();
    // Unsatisfiable: accuracy strictly greater than 1.0.
    let impossible = QaAssertion {
        sector: "overall".to_string(),
        metric: MetricKind::Accuracy,
        comparator: Comparator::Greater,
        threshold: 1.0,
    };
    let state_before = world.state.clone();
    let report = run_finetune(
        &manual(Scenario::FullFinetune),
        &tree,
        &store,
        &mut world.state,
        &world.registry,
        &mut world.alert_log,
        &[impossible],
        &SynonymLexicon::empty(),
        &config,
        Timestamp(1_000),
    )
    .unwrap();
    assert!(matches!(report.outcome, FinetuneOutcome::QaBlocked { .. }));
    // Registry untouched, state untouched, exactly one alert.
    assert!(world.registry.versions().unwrap().is_empty());
    assert!(world.registry.current_version().unwrap().is_none());
    assert_eq!(world.state, state_before);
    assert_eq!(world.alert_log.replay().unwrap().records.len(), 1);
}

#[test]
fn incremental_preserves_last_full_timestamp() {
    let (tree, mut store) = small_world();
    let mut world = World::new();
    let config = tiny_config();
    run_finetune(
        &manual(Scenario::FullFinetune),
        &tree,
        &store,
        &mut world.state,
        &world.registry,
        &mut world.alert_log,
        &[],
        &SynonymLexicon::empty(),
        &config,
        Timestamp(1_000),
    )
    .unwrap();
    let full_version = world.state.current_model_version.clone().unwrap();

    // Marginal churn on sector s00, then an incremental run.
    for i in 0..4 {
        let id = format!("fresh{i}");
        store
            .upsert_company(Company::new(id.as_str(), id.clone(), vec![], "a platform"))
            .unwrap();
        store
            .annotate(&id.as_str().into(), &"s00".into(), &tree, Timestamp(2_000))
            .unwrap();
    }
    let decision = inspect(
        &world.state,
        &store,
        &tree,
        Timestamp(3_000),
        &config.thresholds,
    );
    assert_eq!(decision.scenario, Scenario::IncrementalFinetune);

    let report = run_finetune(
        &decision,
        &tree,
        &store,
        &mut world.state,
        &world.registry,
        &mut world.alert_log,
        &[],
        &SynonymLexicon::empty(),
        &config,
        Timestamp(3_000),
    )
    .unwrap();
    let FinetuneOutcome::Released { version, .. } = &report.outcome else {
        panic!("expected release");
    };
    assert_ne!(version, &full_version);
    // Incremental runs do not advance the full-finetune clock.
    assert_eq!(world.state.last_full_finetune_at, Timestamp(1_000));
    assert_eq!(world.registry.versions().unwrap().len(), 2);
}

#[test]
fn no_eligible_sectors_aborts_with_diagnostic() {
    let tree = SectorTree::from_records([("a", None, "alpha")]).unwrap();
    let mut store = CompanyStore::new();
    store
        .upsert_company(Company::new("c1", "C1", vec![], ""))
        .unwrap();
    store
        .annotate(&"c1".into(), &"a".into(), &tree, Timestamp(1))
        .unwrap();
    let mut world = World::new();
    let err = run_finetune(
        &manual(Scenario::FullFinetune),
        &tree,
        &store,
        &mut world.state,
        &world.registry,
        &mut world.alert_log,
        &[],
        &SynonymLexicon::empty(),
        &tiny_config(),
        Timestamp(1_000),
    )
    .unwrap_err();
    assert!(err.to_string().contains("no eligible sectors"));
}

#[test]
fn tick_cycle_trains_then_skips_then_retrains_on_framework_edit() {
    let (tree, store) = small_world();
    let mut world = World::new();
    let config = tiny_config();
    let lexicon = SynonymLexicon::empty();

    // Day 1: bootstrap forces a full finetune, then inference covers all.
    let mut state = InspectionState::bootstrap();
    let outcome = tick(
        &mut state,
        &tree,
        &store,
        &mut world.env(),
        &[],
        &lexicon,
        &config,
        Timestamp(10_000),
    )
    .unwrap();
    assert_eq!(outcome.decision.scenario, Scenario::FullFinetune);
    assert_eq!(outcome.selected, store.len());
    assert_eq!(outcome.published, store.len());

    // Day 2: no changes, skip and no re-inference.
    let outcome = tick(
        &mut state,
        &tree,
        &store,
        &mut world.env(),
        &[],
        &lexicon,
        &config,
        Timestamp(10_000 + 86_400),
    )
    .unwrap();
    assert_eq!(outcome.decision.scenario, Scenario::SkipFinetune);
    assert_eq!(outcome.selected, 0);
    assert!(outcome.finetune.is_none());

    // Day 3: framework edit triggers the full path again.
    let (tree2, _) = tree.add_node(None, "brand new sector").unwrap();
    let outcome = tick(
        &mut state,
        &tree2,
        &store,
        &mut world.env(),
        &[],
        &lexicon,
        &config,
        Timestamp(10_000 + 2 * 86_400),
    )
    .unwrap();
    assert_eq!(outcome.decision.scenario, Scenario::FullFinetune);
    // Model version changed, so every company was re-inferred.
    assert_eq!(outcome.selected, store.len());

    // Journal: three runs with strictly increasing timestamps.
    let journal = world.journal.replay().unwrap().records;
    assert_eq!(journal.len(), 3);
    let stamps: Vec<i64> = journal.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(stamps.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(journal[1][1], "skip-finetune");
}

#[test]
fn predictions_latest_wins_and_events_accumulate() {
    let (tree, store) = small_world();
    let mut world = World::new();
    let config = tiny_config();
    let lexicon = SynonymLexicon::empty();
    let mut state = InspectionState::bootstrap();
    tick(
        &mut state,
        &tree,
        &store,
        &mut world.env(),
        &[],
        &lexicon,
        &config,
        Timestamp(10_000),
    )
    .unwrap();
    // Force a second full run by editing the framework; every company is
    // re-inferred under the new model version.
    let (tree2, _) = tree.add_node(None, "extra sector").unwrap();
    tick(
        &mut state,
        &tree2,
        &store,
        &mut world.env(),
        &[],
        &lexicon,
        &config,
        Timestamp(20_000),
    )
    .unwrap();

    let table = world.prediction_store.read().unwrap();
    assert_eq!(table.len(), store.len(), "latest-wins keeps one row per company");
    let events = world.prediction_events.replay().unwrap().records;
    assert_eq!(events.len(), 2 * store.len(), "event log keeps every publish");
}
