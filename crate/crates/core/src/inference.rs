//! Incremental batch inference: rule-based company selection, parallel
//! generation, exact-match mapping back to sector nodes (novel outputs kept
//! verbatim), and publishing to the prediction store plus event log.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::company::{fill_template, Company, CompanyId, CompanyStore, Timestamp};
use crate::framework::{SectorId, SectorTree};
use crate::model::{generate, Checkpoint, ModelError};
use crate::persistence::{AppendLog, SnapshotStore, StoreError};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("empty load-reduction window")]
    EmptyWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub company_id: CompanyId,
    pub generated_text: String,
    /// Present only when the generated text exactly matches a sector name.
    pub matched_sector_id: Option<SectorId>,
    pub model_version: String,
    pub feature_version: String,
    pub predicted_at: Timestamp,
}

/// Per-company record of the last (feature_version, model_version) inferred.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceLedger {
    entries: BTreeMap<CompanyId, LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub feature_version: String,
    pub model_version: String,
}

impl InferenceLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, company: &CompanyId) -> Option<&LedgerEntry> {
        self.entries.get(company)
    }

    /// Single-writer update applied after all batches complete.
    pub fn record(&mut self, records: &[PredictionRecord]) {
        for record in records {
            self.entries.insert(
                record.company_id.clone(),
                LedgerEntry {
                    feature_version: record.feature_version.clone(),
                    model_version: record.model_version.clone(),
                },
            );
        }
    }

    pub fn save(&self, store: &SnapshotStore) -> Result<(), StoreError> {
        let records: Vec<Vec<String>> = self
            .entries
            .iter()
            .map(|(company, entry)| {
                vec![
                    company.to_string(),
                    entry.feature_version.clone(),
                    entry.model_version.clone(),
                ]
            })
            .collect();
        store.write(&records)
    }

    pub fn load(store: &SnapshotStore) -> Result<Self, StoreError> {
        let mut ledger = InferenceLedger::new();
        for record in store.read_or_default()? {
            if record.len() != 3 {
                return Err(StoreError::Corrupt {
                    path: store.path().to_path_buf(),
                    line: 0,
                    detail: format!("ledger record with {} fields", record.len()),
                });
            }
            ledger.entries.insert(
                CompanyId(record[0].clone()),
                LedgerEntry {
                    feature_version: record[1].clone(),
                    model_version: record[2].clone(),
                },
            );
        }
        Ok(ledger)
    }
}

/// A company needs re-inference when it was never inferred, its features
/// changed, or the model version moved (which re-selects everyone).
pub fn select_companies(
    store: &CompanyStore,
    ledger: &InferenceLedger,
    current_model_version: &str,
) -> BTreeSet<CompanyId> {
    store
        .companies()
        .filter(|company| match ledger.entry(&company.id) {
            None => true,
            Some(entry) => {
                entry.feature_version != company.feature_version
                    || entry.model_version != current_model_version
            }
        })
        .map(|company| company.id.clone())
        .collect()
}

/// Generate a sector for every company, in parallel over companies, and
/// record the run in the ledger (single writer, after all batches).
pub fn infer_batch(
    checkpoint: &Checkpoint,
    companies: &[&Company],
    tree: &SectorTree,
    ledger: &mut InferenceLedger,
    now: Timestamp,
) -> Result<Vec<PredictionRecord>, InferenceError> {
    let version = checkpoint.version();
    let max_len = checkpoint
        .sector_names
        .iter()
        .map(|n| n.split_whitespace().count())
        .max()
        .unwrap_or(4)
        + 2;
    let results: Result<Vec<PredictionRecord>, ModelError> = companies
        .par_iter()
        .map(|company| {
            let sample = fill_template(company, "");
            let input_ids = checkpoint.vocab.encode(&sample.input_text, true);
            let out = generate(
                &checkpoint.backbone,
                &checkpoint.head,
                &checkpoint.prompt,
                checkpoint.paradigm(),
                &input_ids,
                max_len,
            )?;
            let generated_text = checkpoint.vocab.decode(&out);
            // Exact string match after lowercase normalization; anything else
            // stays a novel prediction.
            let matched_sector_id = tree.node_by_name(&generated_text).map(|n| n.id.clone());
            Ok(PredictionRecord {
                company_id: company.id.clone(),
                generated_text,
                matched_sector_id,
                model_version: version.clone(),
                feature_version: company.feature_version.clone(),
                predicted_at: now,
            })
        })
        .collect();
    let records = results?;
    ledger.record(&records);
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublishAck {
    pub persisted: usize,
    /// Company ids whose store upsert or log append failed.
    pub failed: Vec<(CompanyId, String)>,
}

impl PublishAck {
    pub fn fully_persisted(&self) -> bool {
        self.failed.is_empty()
    }
}

fn record_fields(record: &PredictionRecord) -> Vec<String> {
    vec![
        record.company_id.to_string(),
        record.generated_text.clone(),
        record
            .matched_sector_id
            .as_ref()
            .map(|s| s.to_string())
            .unwrap_or_default(),
        record.model_version.clone(),
        record.feature_version.clone(),
        record.predicted_at.to_string(),
    ]
}

pub fn parse_prediction(fields: &[String]) -> Option<PredictionRecord> {
    if fields.len() != 6 {
        return None;
    }
    Some(PredictionRecord {
        company_id: CompanyId(fields[0].clone()),
        generated_text: fields[1].clone(),
        matched_sector_id: (!fields[2].is_empty()).then(|| SectorId(fields[2].clone())),
        model_version: fields[3].clone(),
        feature_version: fields[4].clone(),
        predicted_at: Timestamp(fields[5].parse().ok()?),
    })
}

/// Upsert the latest prediction per company into the snapshot store and
/// append every record to the event log. Failures are reported per record.
pub fn publish(
    records: &[PredictionRecord],
    prediction_store: &SnapshotStore,
    event_log: &mut AppendLog,
) -> Result<PublishAck, InferenceError> {
    if records.is_empty() {
        return Ok(PublishAck {
            persisted: 0,
            failed: Vec::new(),
        });
    }
    let mut failed: Vec<(CompanyId, String)> = Vec::new();

    // Latest-wins table, keyed by company.
    let mut table: BTreeMap<String, Vec<String>> = prediction_store
        .read_or_default()?
        .into_iter()
        .filter(|r| !r.is_empty())
        .map(|r| (r[0].clone(), r))
        .collect();
    for record in records {
        table.insert(record.company_id.to_string(), record_fields(record));
    }
    let rows: Vec<Vec<String>> = table.into_values().collect();
    if let Err(e) = prediction_store.write(&rows) {
        for record in records {
            failed.push((record.company_id.clone(), format!("store: {e}")));
        }
    }

    for record in records {
        let fields = record_fields(record);
        let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
        if let Err(e) = event_log.append(&refs) {
            failed.push((record.company_id.clone(), format!("log: {e}")));
        }
    }

    failed.sort();
    failed.dedup();
    Ok(PublishAck {
        persisted: records.len() - failed.len().min(records.len()),
        failed,
    })
}

/// One day's selection pressure: how many of the N companies were selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayLoad {
    pub selected: usize,
    pub total: usize,
}

/// Mean of (1 - selected/N) over the window's days.
pub fn load_reduction(window: &[DayLoad]) -> Result<f64, InferenceError> {
    if window.is_empty() {
        return Err(InferenceError::EmptyWindow);
    }
    let sum: f64 = window
        .iter()
        .map(|day| {
            if day.total == 0 {
                1.0
            } else {
                1.0 - day.selected as f64 / day.total as f64
            }
        })
        .sum();
    Ok(sum / window.len() as f64)
}
