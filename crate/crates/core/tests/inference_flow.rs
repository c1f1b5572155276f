//! Inference against a model trained to memorize: exact-name matching,
//! novel-prediction handling, and batch-partition independence.

use sectorial_core::company::{Company, Timestamp};
use sectorial_core::framework::SectorTree;
use sectorial_core::inference::{infer_batch, InferenceLedger};
use sectorial_core::model::{
    build_checkpoint, train, Backbone, EncodedSample, ModelDims, Paradigm, TrainConfig,
    Vocabulary,
};
use sectorial_core::rng::Rng;

/// Train a tiny model until it memorizes a handful of (description ->
/// sector name) pairs, then wrap it in a checkpoint.
fn memorized_checkpoint() -> (sectorial_core::model::Checkpoint, Vec<Company>) {
    let companies = vec![
        Company::new(
            "pay",
            "Acme Pay",
            vec![],
            "an online payment platform for cashless checkout",
        ),
        Company::new(
            "mine",
            "Astro Dig",
            vec![],
            "asteroid prospecting rigs for orbital mining",
        ),
    ];
    let targets = ["financial service", "space mining"];
    let vocab = Vocabulary::build(
        companies
            .iter()
            .map(|c| c.description.as_str())
            .chain(targets)
            .chain(["acme pay astro dig . sector: is an"]),
        128,
    );
    let dataset: Vec<EncodedSample> = companies
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (company, target))| {
            let sample = sectorial_core::company::fill_template(company, target);
            EncodedSample {
                input_ids: vocab.encode(&sample.input_text, true),
                target_ids: vocab.encode(&sample.target_text, true),
                class_index: i,
            }
        })
        .collect();
    let dims = ModelDims::tiny_for_tests();
    let backbone = Backbone::init(dims, vocab.len(), &mut Rng::new(40));
    let config = TrainConfig {
        total_steps: 400,
        freeze_steps: 0,
        lr_frozen: 0.02,
        lr_joint: 0.02,
        warmup_frozen: 0,
        warmup_joint: 20,
        batch_size: 4,
        seed: 40,
        paradigm: Paradigm::ModelTuning,
        patience: usize::MAX,
        eval_every: 50,
    };
    let out = train(backbone, None, None, &dataset, &dataset, &vocab, 2, &config).unwrap();
    assert_eq!(
        out.history.best_accuracy, 1.0,
        "tiny model failed to memorize: {:?}",
        out.history.evals
    );
    let checkpoint = build_checkpoint(
        config,
        vocab,
        out.backbone,
        out.head,
        out.prompt,
        targets.iter().map(|t| t.to_string()).collect(),
        400,
        1.0,
        Timestamp(5),
    );
    (checkpoint, companies)
}

#[test]
fn memorized_outputs_match_or_stay_novel() {
    let (checkpoint, companies) = memorized_checkpoint();
    // Tree that knows "financial service" but not "space mining".
    let tree = SectorTree::from_records([
        ("fin", None, "financial service"),
        ("agri", None, "vertical farming"),
    ])
    .unwrap();
    let refs: Vec<&Company> = companies.iter().collect();
    let mut ledger = InferenceLedger::new();
    let records = infer_batch(&checkpoint, &refs, &tree, &mut ledger, Timestamp(9)).unwrap();
    assert_eq!(records.len(), 2);

    let pay = records.iter().find(|r| r.company_id.as_str() == "pay").unwrap();
    assert_eq!(pay.generated_text, "financial service");
    assert_eq!(
        pay.matched_sector_id.as_ref().map(|s| s.as_str()),
        Some("fin")
    );

    // The model emits a name outside the framework: kept verbatim, no match.
    let mine = records.iter().find(|r| r.company_id.as_str() == "mine").unwrap();
    assert_eq!(mine.generated_text, "space mining");
    assert!(mine.matched_sector_id.is_none());

    // Prediction metadata reflects the inputs at inference time.
    for record in &records {
        let company = companies
            .iter()
            .find(|c| c.id == record.company_id)
            .unwrap();
        assert_eq!(record.feature_version, company.feature_version);
        assert_eq!(record.model_version, checkpoint.version());
        assert_eq!(record.predicted_at, Timestamp(9));
    }
    // Ledger got the single-writer update.
    assert_eq!(ledger.len(), 2);
}

#[test]
fn batch_partitioning_does_not_change_records() {
    let (checkpoint, companies) = memorized_checkpoint();
    let tree = SectorTree::from_records([("fin", None, "financial service")]).unwrap();
    let refs: Vec<&Company> = companies.iter().collect();

    let mut ledger_whole = InferenceLedger::new();
    let whole = infer_batch(&checkpoint, &refs, &tree, &mut ledger_whole, Timestamp(9)).unwrap();

    let mut ledger_split = InferenceLedger::new();
    let mut split = Vec::new();
    for chunk in refs.chunks(1) {
        split.extend(infer_batch(&checkpoint, chunk, &tree, &mut ledger_split, Timestamp(9)).unwrap());
    }
    assert_eq!(whole, split);
    assert_eq!(ledger_whole, ledger_split);
}
