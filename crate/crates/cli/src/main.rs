//! Command-line driver for the sector inference pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 QA-gate block, 4 data
//! error. Failures print a machine-readable `ERROR <code> <detail>` line on
//! stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sectorial_core::attribution::{attribute, attribution_report, build_training_set};
use sectorial_core::augment::{balance, SynonymLexicon};
use sectorial_core::company::{fill_template, CompanyStore, Timestamp};
use sectorial_core::config::RunConfig;
use sectorial_core::eval::{
    confusion, evaluate_assertions, metrics, parse_assertions, QaAssertion, QaVerdict,
};
use sectorial_core::framework::{diff_frameworks, SectorTree};
use sectorial_core::inference::{infer_batch, publish, select_companies, InferenceLedger};
use sectorial_core::model::{pretrain, Checkpoint, PretrainedBase, Vocabulary};
use sectorial_core::orchestrator::{
    build_vocab, inspect, run_finetune, tick, FinetuneOutcome, InspectionState, Scenario,
    ScenarioDecision, TickEnv, Trigger, TriggerKind,
};
use sectorial_core::persistence::{
    encode_line, write_atomic, AppendLog, ModelRegistry, SnapshotStore,
};
use sectorial_core::synth::{gen_corpus, keyword_oracle_accuracy, SyntheticSpec};

#[derive(Parser)]
#[command(name = "sectorial", version, about = "Hierarchical sector inference pipeline")]
struct Cli {
    /// Run configuration file (JSON); builtin defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Clock override in epoch seconds, for reproducible runs.
    #[arg(long, global = true)]
    now: Option<i64>,

    /// Seed override; flows into every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into the configured data paths.
    GenCorpus {
        #[arg(long, default_value_t = 8)]
        sectors: usize,
        #[arg(long, default_value_t = 40)]
        samples: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Sectors per parent node; 0 for a flat tree.
        #[arg(long, default_value_t = 4)]
        group_size: usize,
    },
    /// Pretrain the backbone on the company corpus; store it in the registry.
    Pretrain,
    /// Framework file operations.
    Framework {
        #[command(subcommand)]
        action: FrameworkAction,
    },
    /// Validate a companies file (and optional annotation log) and install
    /// them at the configured paths.
    Ingest {
        companies: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Record an annotation event for a company.
    Annotate { company: String, sector: String },
    /// Run annotation attribution and write the per-sector report.
    Attribute,
    /// Build, balance, and report the training set.
    Balance,
    /// Force a finetune regardless of the daily inspection.
    Train {
        #[arg(long, default_value = "full")]
        scenario: String,
    },
    /// Print the scenario the daily inspection would choose (no side effects).
    Inspect,
    /// One daily cycle: inspect, finetune if triggered, infer, journal.
    Tick,
    /// Select changed companies and infer them with the current model.
    Infer,
    /// Evaluate the current model on the annotated companies.
    Evaluate,
    /// Summarize state, registry, and run journal.
    Report,
}

#[derive(Subcommand)]
enum FrameworkAction {
    /// Parse and validate the configured framework file.
    Validate,
    /// Print the tree with names and ids, indented by depth.
    Show,
    /// Structural diff between two framework files.
    Diff { old: PathBuf, new: PathBuf },
}

struct Failure {
    code: u8,
    detail: String,
}

impl Failure {
    fn config(detail: impl Into<String>) -> Self {
        Failure {
            code: 2,
            detail: detail.into(),
        }
    }

    fn qa(detail: impl Into<String>) -> Self {
        Failure {
            code: 3,
            detail: detail.into(),
        }
    }

    fn data(detail: impl Into<String>) -> Self {
        Failure {
            code: 4,
            detail: detail.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("ERROR {} {}", failure.code, failure.detail);
            ExitCode::from(failure.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| Failure::config(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.train.seed = seed;
        config.pretrain.seed = seed;
    }
    let now = Timestamp(cli.now.unwrap_or_else(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    }));

    match cli.command {
        Command::GenCorpus {
            sectors,
            samples,
            noise,
            group_size,
        } => cmd_gen_corpus(&config, sectors, samples, noise, group_size, now),
        Command::Pretrain => cmd_pretrain(&config),
        Command::Framework { action } => cmd_framework(&config, action),
        Command::Ingest {
            companies,
            annotations,
        } => cmd_ingest(&config, &companies, annotations.as_deref()),
        Command::Annotate { company, sector } => cmd_annotate(&config, &company, &sector, now),
        Command::Attribute => cmd_attribute(&config),
        Command::Balance => cmd_balance(&config),
        Command::Train { scenario } => cmd_train(&config, &scenario, now),
        Command::Inspect => cmd_inspect(&config, now),
        Command::Tick => cmd_tick(&config, now),
        Command::Infer => cmd_infer(&config, now),
        Command::Evaluate => cmd_evaluate(&config),
        Command::Report => cmd_report(&config),
    }
}

// ---- shared loading --------------------------------------------------------

fn load_tree(config: &RunConfig) -> Result<SectorTree, Failure> {
    let path = config.paths.framework();
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::data(format!("framework {}: {e}", path.display())))?;
    SectorTree::from_document(&text).map_err(|e| Failure::data(format!("framework: {e}")))
}

fn load_store(config: &RunConfig) -> Result<CompanyStore, Failure> {
    let mut store = CompanyStore::new();
    let companies = SnapshotStore::new(config.paths.companies());
    store
        .load_companies(&companies)
        .map_err(|e| Failure::data(format!("companies: {e}")))?;
    let log_path = config.paths.annotations();
    if log_path.exists() {
        let log =
            AppendLog::open(&log_path).map_err(|e| Failure::data(format!("annotations: {e}")))?;
        let replay = log
            .replay()
            .map_err(|e| Failure::data(format!("annotations: {e}")))?;
        if replay.truncated {
            eprintln!(
                "warning: annotation log has a truncated trailing record; replayed {} records",
                replay.records.len()
            );
        }
        store
            .replay_events(&replay)
            .map_err(|e| Failure::data(format!("annotations: {e}")))?;
    }
    Ok(store)
}

fn load_lexicon(config: &RunConfig) -> Result<SynonymLexicon, Failure> {
    let path = config.paths.lexicon();
    if path.exists() {
        SynonymLexicon::load(&path).map_err(|e| Failure::data(format!("lexicon: {e}")))
    } else {
        Ok(SynonymLexicon::bundled())
    }
}

fn load_assertions(config: &RunConfig) -> Result<Vec<QaAssertion>, Failure> {
    let path = config.paths.assertions();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::data(format!("assertions {}: {e}", path.display())))?;
    parse_assertions(&text).map_err(|e| Failure::data(format!("assertions: {e}")))
}

fn load_current_checkpoint(config: &RunConfig) -> Result<(String, Checkpoint), Failure> {
    let registry = ModelRegistry::new(config.paths.registry());
    let (version, bytes) = registry
        .load_current()
        .map_err(|e| Failure::data(format!("registry: {e}")))?
        .ok_or_else(|| Failure::data("no released model in the registry"))?;
    let checkpoint =
        Checkpoint::from_bytes(&bytes).map_err(|e| Failure::data(format!("checkpoint: {e}")))?;
    Ok((version, checkpoint))
}

fn write_report(config: &RunConfig, name: &str, content: &str) -> Result<PathBuf, Failure> {
    let path = config.paths.reports().join(name);
    write_atomic(&path, content.as_bytes())
        .map_err(|e| Failure::data(format!("report {}: {e}", path.display())))?;
    Ok(path)
}

// ---- subcommands -----------------------------------------------------------

fn cmd_gen_corpus(
    config: &RunConfig,
    sectors: usize,
    samples: usize,
    noise: f64,
    group_size: usize,
    now: Timestamp,
) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        sector_count: sectors,
        samples_per_sector: samples,
        noise,
        group_size,
        ..SyntheticSpec::default()
    };
    let corpus = gen_corpus(&spec, config.seed).map_err(|e| Failure::data(e.to_string()))?;

    write_atomic(
        &config.paths.framework(),
        corpus.tree.to_document().as_bytes(),
    )
    .map_err(|e| Failure::data(e.to_string()))?;

    let store = corpus.to_store(now);
    store
        .save_companies(&SnapshotStore::new(config.paths.companies()))
        .map_err(|e| Failure::data(e.to_string()))?;

    // Freshly generated annotation log: one add event per company.
    let mut log_content = String::new();
    for (seq, event) in store.events().iter().enumerate() {
        log_content.push_str(&seq.to_string());
        log_content.push('\t');
        log_content.push_str(&encode_line(&[
            &event.at.to_string(),
            event.company_id.as_str(),
            event.sector_id.as_str(),
            event.action.as_str(),
        ]));
        log_content.push('\n');
    }
    write_atomic(&config.paths.annotations(), log_content.as_bytes())
        .map_err(|e| Failure::data(e.to_string()))?;

    let lexicon_path = config.paths.lexicon();
    if !lexicon_path.exists() {
        write_atomic(&lexicon_path, SynonymLexicon::bundled_raw().as_bytes())
            .map_err(|e| Failure::data(e.to_string()))?;
    }

    println!(
        "generated {} sectors ({} nodes), {} companies, oracle accuracy {:.3}",
        sectors,
        corpus.tree.len(),
        corpus.companies.len(),
        keyword_oracle_accuracy(&corpus)
    );
    Ok(())
}

fn cmd_pretrain(config: &RunConfig) -> Result<(), Failure> {
    let tree = load_tree(config)?;
    let store = load_store(config)?;
    if store.is_empty() {
        return Err(Failure::data("no companies to pretrain on"));
    }
    let samples: Vec<_> = store.companies().map(|c| fill_template(c, "")).collect();
    let sector_names: Vec<String> = tree.nodes().map(|n| n.name.clone()).collect();
    let vocab: Vocabulary = build_vocab(&samples, &sector_names, config.dims.vocab_cap);
    let corpus: Vec<Vec<u32>> = samples
        .iter()
        .map(|s| vocab.encode(&s.input_text, false))
        .collect();
    let (backbone, losses) = pretrain(&corpus, config.dims, vocab.len(), &config.pretrain)
        .map_err(|e| Failure::data(e.to_string()))?;
    let base = PretrainedBase::new(vocab, backbone, config.pretrain.steps);
    ModelRegistry::new(config.paths.registry())
        .install_base(&base.to_bytes())
        .map_err(|e| Failure::data(e.to_string()))?;
    let final_loss = losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "pretrained backbone: {} steps, vocab {}, final denoising loss {final_loss:.3}",
        config.pretrain.steps,
        base.vocab.len()
    );
    Ok(())
}

fn cmd_framework(config: &RunConfig, action: FrameworkAction) -> Result<(), Failure> {
    match action {
        FrameworkAction::Validate => {
            let tree = load_tree(config)?;
            println!(
                "ok: {} sectors, depth {}, fingerprint {}",
                tree.len(),
                tree.max_depth(),
                tree.fingerprint()
            );
        }
        FrameworkAction::Show => {
            let tree = load_tree(config)?;
            for id in tree.depth_first_index() {
                let node = tree.node(&id).expect("indexed node exists");
                println!("{}{} [{}]", "  ".repeat(node.depth - 1), node.name, id);
            }
        }
        FrameworkAction::Diff { old, new } => {
            let load = |path: &PathBuf| -> Result<SectorTree, Failure> {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
                SectorTree::from_document(&text).map_err(|e| Failure::data(e.to_string()))
            };
            let old_tree = load(&old)?;
            let new_tree = load(&new)?;
            let delta = diff_frameworks(&old_tree, &new_tree);
            if delta.is_empty() {
                println!("identical (fingerprint {})", old_tree.fingerprint());
            } else {
                for id in &delta.added {
                    println!("added {id}");
                }
                for id in &delta.removed {
                    println!("removed {id}");
                }
                for id in &delta.modified {
                    println!("modified {id}");
                }
                if delta.layer_added {
                    println!(
                        "layer added (max depth {} -> {})",
                        old_tree.max_depth(),
                        new_tree.max_depth()
                    );
                }
            }
        }
    }
    Ok(())
}

fn cmd_ingest(
    config: &RunConfig,
    companies: &PathBuf,
    annotations: Option<&std::path::Path>,
) -> Result<(), Failure> {
    let incoming = SnapshotStore::new(companies.clone());
    let mut store = CompanyStore::new();
    let count = store
        .load_companies(&incoming)
        .map_err(|e| Failure::data(format!("companies: {e}")))?;
    let bytes = std::fs::read(companies).map_err(|e| Failure::data(e.to_string()))?;
    write_atomic(&config.paths.companies(), &bytes).map_err(|e| Failure::data(e.to_string()))?;
    println!("ingested {count} companies");

    if let Some(annotations) = annotations {
        let log = AppendLog::open(annotations).map_err(|e| Failure::data(e.to_string()))?;
        let replay = log.replay().map_err(|e| Failure::data(e.to_string()))?;
        let mut probe = store.clone();
        probe
            .replay_events(&replay)
            .map_err(|e| Failure::data(format!("annotations: {e}")))?;
        let bytes = std::fs::read(annotations).map_err(|e| Failure::data(e.to_string()))?;
        write_atomic(&config.paths.annotations(), &bytes)
            .map_err(|e| Failure::data(e.to_string()))?;
        println!("ingested {} annotation events", replay.records.len());
    }
    Ok(())
}

fn cmd_annotate(
    config: &RunConfig,
    company: &str,
    sector: &str,
    now: Timestamp,
) -> Result<(), Failure> {
    let tree = load_tree(config)?;
    let mut store = load_store(config)?;
    let before = store.events().len();
    store
        .annotate(&company.into(), &sector.into(), &tree, now)
        .map_err(|e| Failure::data(e.to_string()))?;
    let mut log =
        AppendLog::open(config.paths.annotations()).map_err(|e| Failure::data(e.to_string()))?;
    for event in &store.events()[before..] {
        CompanyStore::log_event(&mut log, event).map_err(|e| Failure::data(e.to_string()))?;
    }
    let new_events = store.events().len() - before;
    println!("annotated {company} -> {sector} ({new_events} events)");
    Ok(())
}

fn cmd_attribute(config: &RunConfig) -> Result<(), Failure> {
    let tree = load_tree(config)?;
    let store = load_store(config)?;
    let result = attribute(&tree, &store, config.attribution_threshold);
    let report = attribution_report(&tree, &store, &result);
    let mut content = String::from("sector_id\tname\tdirect\teffective\teligible\n");
    for row in &report {
        let line = format!(
            "{}\t{}\t{}\t{}\t{}\n",
            row.sector_id, row.sector_name, row.direct_count, row.effective_count, row.eligible
        );
        content.push_str(&line);
        print!("{line}");
    }
    println!(
        "eligible {} of {} sectors; {} companies excluded",
        result.eligible.len(),
        tree.len(),
        result.excluded_companies.len()
    );
    let path = write_report(config, "attribution.tsv", &content)?;
    println!("report written to {}", path.display());
    Ok(())
}

fn cmd_balance(config: &RunConfig) -> Result<(), Failure> {
    let tree = load_tree(config)?;
    let store = load_store(config)?;
    let lexicon = load_lexicon(config)?;
    let result = attribute(&tree, &store, config.attribution_threshold);
    if result.eligible.is_empty() {
        return Err(Failure::data("no eligible sectors; nothing to balance"));
    }
    let training_set = build_training_set(&result, &store, &tree);
    let balanced = balance(&training_set.per_sector, &lexicon, config.seed)
        .map_err(|e| Failure::data(e.to_string()))?;
    let mut counts = String::from("sector\tbefore\tafter\n");
    for (before, after) in training_set.per_sector.iter().zip(&balanced) {
        let line = format!(
            "{}\t{}\t{}\n",
            before.sector_name,
            before.samples.len(),
            after.samples.len()
        );
        counts.push_str(&line);
        print!("{line}");
    }
    write_report(config, "balance_counts.tsv", &counts)?;
    let mut dataset = String::new();
    for sector in &balanced {
        for sample in &sector.samples {
            dataset.push_str(&encode_line(&[&sample.input_text, &sample.target_text]));
            dataset.push('\n');
        }
    }
    let path = write_report(config, "balanced_dataset.tsv", &dataset)?;
    println!("balanced dataset written to {}", path.display());
    Ok(())
}

#[allow(clippy::type_complexity)]
fn open_tick_env(
    config: &RunConfig,
) -> Result<
    (
        ModelRegistry,
        AppendLog,
        AppendLog,
        SnapshotStore,
        AppendLog,
        InferenceLedger,
    ),
    Failure,
> {
    let registry = ModelRegistry::new(config.paths.registry());
    let alert_log =
        AppendLog::open(config.paths.alerts()).map_err(|e| Failure::data(e.to_string()))?;
    let journal =
        AppendLog::open(config.paths.journal()).map_err(|e| Failure::data(e.to_string()))?;
    let prediction_store = SnapshotStore::new(config.paths.predictions());
    let prediction_events = AppendLog::open(config.paths.prediction_events())
        .map_err(|e| Failure::data(e.to_string()))?;
    let ledger = InferenceLedger::load(&SnapshotStore::new(config.paths.ledger()))
        .map_err(|e| Failure::data(e.to_string()))?;
    Ok((
        registry,
        alert_log,
        journal,
        prediction_store,
        prediction_events,
        ledger,
    ))
}

fn cmd_train(config: &RunConfig, scenario: &str, now: Timestamp) -> Result<(), Failure> {
    let scenario = match scenario {
        "full" => Scenario::FullFinetune,
        "incremental" => Scenario::IncrementalFinetune,
        other => return Err(Failure::config(format!("unknown scenario {other:?}"))),
    };
    let tree = load_tree(config)?;
    let store = load_store(config)?;
    let lexicon = load_lexicon(config)?;
    let assertions = load_assertions(config)?;
    let registry = ModelRegistry::new(config.paths.registry());
    let mut alert_log =
        AppendLog::open(config.paths.alerts()).map_err(|e| Failure::data(e.to_string()))?;
    let mut state = InspectionState::load_or_bootstrap(&config.paths.state())
        .map_err(|e| Failure::data(e.to_string()))?;
    let decision = ScenarioDecision {
        scenario,
        reasons: vec![Trigger {
            kind: TriggerKind::Manual,
            detail: "cli train".to_string(),
        }],
    };
    let pipeline = config.pipeline();
    let report = run_finetune(
        &decision,
        &tree,
        &store,
        &mut state,
        &registry,
        &mut alert_log,
        &assertions,
        &lexicon,
        &pipeline,
        now,
    )
    .map_err(|e| Failure::data(e.to_string()))?;
    println!(
        "trained on {} samples ({} validation), {} eligible sectors",
        report.train_samples,
        report.validation_samples,
        report.eligible_sectors.len()
    );
    match &report.outcome {
        FinetuneOutcome::Released {
            version,
            validation_accuracy,
            ..
        } => {
            state
                .save(&config.paths.state())
                .map_err(|e| Failure::data(e.to_string()))?;
            println!("released {version} (validation accuracy {validation_accuracy:.3})");
            Ok(())
        }
        FinetuneOutcome::QaBlocked { violations, .. } => Err(Failure::qa(format!(
            "release blocked: {}",
            violations.join("; ")
        ))),
    }
}

fn cmd_inspect(config: &RunConfig, now: Timestamp) -> Result<(), Failure> {
    let tree = load_tree(config)?;
    let store = load_store(config)?;
    let state = InspectionState::load_or_bootstrap(&config.paths.state())
        .map_err(|e| Failure::data(e.to_string()))?;
    let decision = inspect(&state, &store, &tree, now, &config.thresholds);
    println!("{}", decision.scenario.as_str());
    for trigger in &decision.reasons {
        println!("  {}: {}", trigger.kind.as_str(), trigger.detail);
    }
    Ok(())
}

fn cmd_tick(config: &RunConfig, now: Timestamp) -> Result<(), Failure> {
    let tree = load_tree(config)?;
    let store = load_store(config)?;
    let lexicon = load_lexicon(config)?;
    let assertions = load_assertions(config)?;
    let mut state = InspectionState::load_or_bootstrap(&config.paths.state())
        .map_err(|e| Failure::data(e.to_string()))?;
    let (registry, mut alert_log, mut journal, prediction_store, mut prediction_events, mut ledger) =
        open_tick_env(config)?;
    let mut env = TickEnv {
        registry: &registry,
        alert_log: &mut alert_log,
        journal: &mut journal,
        prediction_store: &prediction_store,
        prediction_events: &mut prediction_events,
        ledger: &mut ledger,
    };
    let pipeline = config.pipeline();
    let outcome = tick(
        &mut state,
        &tree,
        &store,
        &mut env,
        &assertions,
        &lexicon,
        &pipeline,
        now,
    )
    .map_err(|e| Failure::data(e.to_string()))?;
    state
        .save(&config.paths.state())
        .map_err(|e| Failure::data(e.to_string()))?;
    ledger
        .save(&SnapshotStore::new(config.paths.ledger()))
        .map_err(|e| Failure::data(e.to_string()))?;
    println!(
        "{}: {} selected, {} published, model {}",
        outcome.decision.scenario.as_str(),
        outcome.selected,
        outcome.published,
        outcome.model_version.as_deref().unwrap_or("-")
    );
    if let Some(FinetuneOutcome::QaBlocked { violations, .. }) = &outcome.finetune {
        return Err(Failure::qa(format!(
            "release blocked: {}",
            violations.join("; ")
        )));
    }
    Ok(())
}

fn cmd_infer(config: &RunConfig, now: Timestamp) -> Result<(), Failure> {
    let tree = load_tree(config)?;
    let store = load_store(config)?;
    let (version, checkpoint) = load_current_checkpoint(config)?;
    let ledger_store = SnapshotStore::new(config.paths.ledger());
    let mut ledger =
        InferenceLedger::load(&ledger_store).map_err(|e| Failure::data(e.to_string()))?;
    let selected = select_companies(&store, &ledger, &version);
    let companies: Vec<_> = selected.iter().filter_map(|id| store.company(id)).collect();
    let records = infer_batch(&checkpoint, &companies, &tree, &mut ledger, now)
        .map_err(|e| Failure::data(e.to_string()))?;
    let prediction_store = SnapshotStore::new(config.paths.predictions());
    let mut events = AppendLog::open(config.paths.prediction_events())
        .map_err(|e| Failure::data(e.to_string()))?;
    let ack = publish(&records, &prediction_store, &mut events)
        .map_err(|e| Failure::data(e.to_string()))?;
    if !ack.fully_persisted() {
        return Err(Failure::data(format!(
            "partial publish: {} records failed",
            ack.failed.len()
        )));
    }
    ledger
        .save(&ledger_store)
        .map_err(|e| Failure::data(e.to_string()))?;
    let novel = records
        .iter()
        .filter(|r| r.matched_sector_id.is_none())
        .count();
    println!(
        "selected {}, inferred {}, published {}, novel {}",
        selected.len(),
        records.len(),
        ack.persisted,
        novel
    );
    Ok(())
}

fn cmd_evaluate(config: &RunConfig) -> Result<(), Failure> {
    let tree = load_tree(config)?;
    let store = load_store(config)?;
    let (version, checkpoint) = load_current_checkpoint(config)?;
    let assertions = load_assertions(config)?;

    let mut golds = Vec::new();
    let mut inputs = Vec::new();
    let mut skipped = 0usize;
    for company in store.companies() {
        let Some(sector) = store.active_sector(&company.id) else {
            continue;
        };
        let Some(node) = tree.node(sector) else {
            continue;
        };
        if !checkpoint.sector_names.contains(&node.name) {
            skipped += 1;
            continue;
        }
        golds.push(node.name.clone());
        inputs.push(fill_template(company, "").input_text);
    }
    if golds.is_empty() {
        return Err(Failure::data(
            "no annotated companies within the model's label space",
        ));
    }
    let max_len = checkpoint
        .sector_names
        .iter()
        .map(|n| n.split_whitespace().count())
        .max()
        .unwrap_or(4)
        + 2;
    let mut preds = Vec::with_capacity(inputs.len());
    for input in &inputs {
        let ids = checkpoint.vocab.encode(input, true);
        let out = sectorial_core::model::generate(
            &checkpoint.backbone,
            &checkpoint.head,
            &checkpoint.prompt,
            checkpoint.paradigm(),
            &ids,
            max_len,
        )
        .map_err(|e| Failure::data(e.to_string()))?;
        preds.push(checkpoint.vocab.decode(&out));
    }
    let matrix = confusion(&golds, &preds, &checkpoint.sector_names)
        .map_err(|e| Failure::data(e.to_string()))?;
    let m = metrics(&matrix);
    let fmt = |v: Option<f64>| {
        v.map(|x| format!("{x:.4}"))
            .unwrap_or_else(|| "undefined".to_string())
    };
    let mut content = String::from("sector\tprecision\trecall\tsupport\n");
    for sector in &m.per_sector {
        content.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            sector.sector,
            fmt(sector.precision),
            fmt(sector.recall),
            sector.support
        ));
    }
    content.push_str(&format!(
        "overall\taccuracy={}\tsamples={}\tskipped={}\n",
        fmt(m.accuracy),
        m.total,
        skipped
    ));
    print!("{content}");
    let path = write_report(config, "evaluation.tsv", &content)?;
    println!("model {version}; report written to {}", path.display());

    if !assertions.is_empty() {
        match evaluate_assertions(&m, &assertions) {
            QaVerdict::Pass => println!("assertions: pass ({})", assertions.len()),
            QaVerdict::Fail(violations) => {
                return Err(Failure::qa(format!(
                    "{} assertion(s) failed: {}",
                    violations.len(),
                    violations
                        .iter()
                        .map(|v| v.assertion.clone())
                        .collect::<Vec<_>>()
                        .join("; ")
                )));
            }
        }
    }
    Ok(())
}

fn cmd_report(config: &RunConfig) -> Result<(), Failure> {
    let state_path = config.paths.state();
    if state_path.exists() {
        let state =
            InspectionState::load(&state_path).map_err(|e| Failure::data(e.to_string()))?;
        println!(
            "state: model {}, last full finetune at {}, baseline over {} sectors",
            state.current_model_version.as_deref().unwrap_or("-"),
            state.last_full_finetune_at,
            state.baseline.sectors.len()
        );
    } else {
        println!("state: not initialized");
    }
    let registry = ModelRegistry::new(config.paths.registry());
    let versions = registry
        .versions()
        .map_err(|e| Failure::data(e.to_string()))?;
    println!(
        "registry: {} checkpoints, current {}",
        versions.len(),
        registry
            .current_version()
            .map_err(|e| Failure::data(e.to_string()))?
            .unwrap_or_else(|| "-".to_string())
    );
    let journal_path = config.paths.journal();
    if journal_path.exists() {
        let journal = AppendLog::open(&journal_path).map_err(|e| Failure::data(e.to_string()))?;
        let replay = journal.replay().map_err(|e| Failure::data(e.to_string()))?;
        println!("journal: {} runs", replay.records.len());
        for record in replay.records.iter().rev().take(5).rev() {
            println!("  {}", record.join(" | "));
        }
    } else {
        println!("journal: empty");
    }
    Ok(())
}
