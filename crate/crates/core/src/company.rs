//! Companies and their evolving sector annotations: the sample template
//! renderer, the per-sector change accounting against a training-time
//! baseline, and the event-sourced annotation history.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::framework::{SectorId, SectorTree};
use crate::persistence::{AppendLog, Replay, SnapshotStore, StoreError};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CompanyId(pub String);

impl CompanyId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CompanyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CompanyId {
    fn from(s: &str) -> Self {
        CompanyId(s.to_string())
    }
}

/// Seconds since the epoch; all pipeline clocks are injected for
/// deterministic testing.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const SECONDS_PER_DAY: i64 = 86_400;

    pub fn days_since(self, earlier: Timestamp) -> i64 {
        (self.0 - earlier.0) / Self::SECONDS_PER_DAY
    }

    pub fn plus_days(self, days: i64) -> Timestamp {
        Timestamp(self.0 + days * Self::SECONDS_PER_DAY)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Company {
    pub id: CompanyId,
    pub legal_name: String,
    pub tags: Vec<String>,
    pub description: String,
    /// Hash of (legal_name, tags, description); drives re-inference selection.
    pub feature_version: String,
}

impl Company {
    pub fn new(
        id: impl Into<CompanyId>,
        legal_name: impl Into<String>,
        tags: Vec<String>,
        description: impl Into<String>,
    ) -> Self {
        let mut company = Company {
            id: id.into(),
            legal_name: legal_name.into(),
            tags,
            description: description.into(),
            feature_version: String::new(),
        };
        company.feature_version = company.compute_feature_version();
        company
    }

    pub fn compute_feature_version(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.legal_name.as_bytes());
        hasher.update([0u8]);
        for tag in &self.tags {
            hasher.update(tag.as_bytes());
            hasher.update([1u8]);
        }
        hasher.update([0u8]);
        hasher.update(self.description.as_bytes());
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One annotation state transition. Re-annotation is recorded as a removal
/// from the old sector plus an addition to the new one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotationAction {
    Add,
    Remove,
}

impl AnnotationAction {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationAction::Add => "add",
            AnnotationAction::Remove => "remove",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "add" => Some(AnnotationAction::Add),
            "remove" => Some(AnnotationAction::Remove),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub at: Timestamp,
    pub company_id: CompanyId,
    pub sector_id: SectorId,
    pub action: AnnotationAction,
}

/// Rendered sample text. `input_text` always ends with the "Sector:" marker;
/// `target_text` is the sector name, empty for inference-time samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledSample {
    pub input_text: String,
    pub target_text: String,
}

/// Per-sector membership captured when a model is trained; change ratios are
/// measured against it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineSnapshot {
    pub taken_at: Timestamp,
    /// Annotation-event log position at snapshot time.
    pub event_cursor: usize,
    pub sectors: BTreeMap<SectorId, BaselineSector>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineSector {
    pub count_at_baseline: usize,
    pub member_ids: BTreeSet<CompanyId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompanyError {
    #[error("empty company id")]
    EmptyId,
    #[error("unknown company: {0}")]
    UnknownCompany(String),
    #[error("unknown sector: {0}")]
    UnknownSector(String),
    #[error("company {0} has a tag containing a comma")]
    BadTag(String),
}

/// Change-ratio outcome: a sector missing from the baseline (or empty at
/// baseline time) cannot be ratioed and is escalated as a new sector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChangeSignal {
    Ratio(f64),
    NewSector,
}

/// Single-writer, multi-reader store of companies and annotation history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompanyStore {
    companies: BTreeMap<CompanyId, Company>,
    events: Vec<AnnotationEvent>,
    active: BTreeMap<CompanyId, SectorId>,
    /// (company, sector) pairs deactivated because the sector left the
    /// framework; retained for audit.
    orphaned: BTreeSet<(CompanyId, SectorId)>,
}

impl CompanyStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.companies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.companies.is_empty()
    }

    pub fn company(&self, id: &CompanyId) -> Option<&Company> {
        self.companies.get(id)
    }

    pub fn companies(&self) -> impl Iterator<Item = &Company> {
        self.companies.values()
    }

    pub fn events(&self) -> &[AnnotationEvent] {
        &self.events
    }

    pub fn active_sector(&self, id: &CompanyId) -> Option<&SectorId> {
        self.active.get(id)
    }

    /// Companies currently annotated to `sector`.
    pub fn active_members(&self, sector: &SectorId) -> BTreeSet<CompanyId> {
        self.active
            .iter()
            .filter(|(_, s)| *s == sector)
            .map(|(c, _)| c.clone())
            .collect()
    }

    pub fn orphaned(&self) -> &BTreeSet<(CompanyId, SectorId)> {
        &self.orphaned
    }

    pub fn upsert_company(&mut self, company: Company) -> Result<(), CompanyError> {
        if company.id.as_str().is_empty() {
            return Err(CompanyError::EmptyId);
        }
        if company.tags.iter().any(|t| t.contains(',')) {
            return Err(CompanyError::BadTag(company.id.to_string()));
        }
        let mut company = company;
        company.feature_version = company.compute_feature_version();
        self.companies.insert(company.id.clone(), company);
        Ok(())
    }

    /// Annotate a company to a sector; any previous active annotation is
    /// deactivated and both transitions land in the event history.
    pub fn annotate(
        &mut self,
        company_id: &CompanyId,
        sector_id: &SectorId,
        tree: &SectorTree,
        at: Timestamp,
    ) -> Result<(), CompanyError> {
        if !self.companies.contains_key(company_id) {
            return Err(CompanyError::UnknownCompany(company_id.to_string()));
        }
        if !tree.contains(sector_id) {
            return Err(CompanyError::UnknownSector(sector_id.to_string()));
        }
        if self.active.get(company_id) == Some(sector_id) {
            // Re-annotating to the current sector is a no-op for accounting.
            return Ok(());
        }
        if let Some(old) = self.active.get(company_id).cloned() {
            self.push_event(at, company_id.clone(), old, AnnotationAction::Remove);
        }
        self.push_event(
            at,
            company_id.clone(),
            sector_id.clone(),
            AnnotationAction::Add,
        );
        Ok(())
    }

    /// Drop the company's active annotation, if any.
    pub fn deannotate(&mut self, company_id: &CompanyId, at: Timestamp) -> Result<(), CompanyError> {
        if !self.companies.contains_key(company_id) {
            return Err(CompanyError::UnknownCompany(company_id.to_string()));
        }
        if let Some(old) = self.active.get(company_id).cloned() {
            self.push_event(at, company_id.clone(), old, AnnotationAction::Remove);
        }
        Ok(())
    }

    fn push_event(
        &mut self,
        at: Timestamp,
        company_id: CompanyId,
        sector_id: SectorId,
        action: AnnotationAction,
    ) {
        match action {
            AnnotationAction::Add => {
                self.active.insert(company_id.clone(), sector_id.clone());
            }
            AnnotationAction::Remove => {
                if self.active.get(&company_id) == Some(&sector_id) {
                    self.active.remove(&company_id);
                }
            }
        }
        self.events.push(AnnotationEvent {
            at,
            company_id,
            sector_id,
            action,
        });
    }

    /// Deactivate annotations pointing at sectors removed from the framework.
    /// The annotations are flagged as orphaned, not deleted.
    pub fn orphan_sectors(&mut self, removed: &[SectorId], at: Timestamp) {
        let removed: BTreeSet<&SectorId> = removed.iter().collect();
        let victims: Vec<(CompanyId, SectorId)> = self
            .active
            .iter()
            .filter(|(_, s)| removed.contains(s))
            .map(|(c, s)| (c.clone(), s.clone()))
            .collect();
        for (company, sector) in victims {
            self.push_event(at, company.clone(), sector.clone(), AnnotationAction::Remove);
            self.orphaned.insert((company, sector));
        }
    }

    /// Render the sample template for a company. Missing tags or description
    /// drop their clause entirely rather than emitting empty brackets.
    pub fn render_template(
        &self,
        company_id: &CompanyId,
        tree: &SectorTree,
    ) -> Result<FilledSample, CompanyError> {
        let company = self
            .companies
            .get(company_id)
            .ok_or_else(|| CompanyError::UnknownCompany(company_id.to_string()))?;
        let target = self
            .active
            .get(company_id)
            .and_then(|s| tree.node(s))
            .map(|n| n.name.clone())
            .unwrap_or_default();
        Ok(fill_template(company, &target))
    }

    /// Per-sector annotation change ratio against the baseline: every add or
    /// remove transition since the snapshot counts, divided by the sector's
    /// baseline population.
    pub fn change_ratio(
        &self,
        sector_id: &SectorId,
        baseline: &BaselineSnapshot,
    ) -> ChangeSignal {
        let base = match baseline.sectors.get(sector_id) {
            Some(b) if b.count_at_baseline > 0 => b,
            _ => return ChangeSignal::NewSector,
        };
        let cursor = baseline.event_cursor.min(self.events.len());
        let churn = self.events[cursor..]
            .iter()
            .filter(|e| &e.sector_id == sector_id)
            .count();
        ChangeSignal::Ratio(churn as f64 / base.count_at_baseline as f64)
    }

    /// Capture per-sector active membership for every sector in the tree.
    pub fn snapshot_baseline(&self, tree: &SectorTree, at: Timestamp) -> BaselineSnapshot {
        let mut sectors = BTreeMap::new();
        for node in tree.nodes() {
            sectors.insert(
                node.id.clone(),
                BaselineSector {
                    count_at_baseline: 0,
                    member_ids: BTreeSet::new(),
                },
            );
        }
        for (company, sector) in &self.active {
            if let Some(entry) = sectors.get_mut(sector) {
                entry.member_ids.insert(company.clone());
            }
        }
        for entry in sectors.values_mut() {
            entry.count_at_baseline = entry.member_ids.len();
        }
        BaselineSnapshot {
            taken_at: at,
            event_cursor: self.events.len(),
            sectors,
        }
    }

    // ---- file interchange -------------------------------------------------

    /// Write the companies table (id, legal_name, tags, description).
    pub fn save_companies(&self, store: &SnapshotStore) -> Result<(), StoreError> {
        let records: Vec<Vec<String>> = self
            .companies
            .values()
            .map(|c| {
                vec![
                    c.id.to_string(),
                    c.legal_name.clone(),
                    c.tags.join(","),
                    c.description.clone(),
                ]
            })
            .collect();
        store.write(&records)
    }

    pub fn load_companies(&mut self, store: &SnapshotStore) -> Result<usize, StoreError> {
        let records = store.read()?;
        let mut count = 0;
        for record in records {
            if record.len() != 4 {
                return Err(StoreError::Corrupt {
                    path: store.path().to_path_buf(),
                    line: count + 1,
                    detail: format!("expected 4 fields, got {}", record.len()),
                });
            }
            let tags = if record[2].is_empty() {
                Vec::new()
            } else {
                record[2].split(',').map(str::to_string).collect()
            };
            let company = Company::new(record[0].as_str(), record[1].clone(), tags, record[3].clone());
            self.companies.insert(company.id.clone(), company);
            count += 1;
        }
        Ok(count)
    }

    /// Append one annotation event to the log (timestamp, company, sector,
    /// action).
    pub fn log_event(log: &mut AppendLog, event: &AnnotationEvent) -> Result<u64, StoreError> {
        log.append(&[
            &event.at.to_string(),
            event.company_id.as_str(),
            event.sector_id.as_str(),
            event.action.as_str(),
        ])
    }

    /// Rebuild annotation state by replaying the event log.
    pub fn replay_events(&mut self, replay: &Replay) -> Result<usize, StoreError> {
        for (idx, record) in replay.records.iter().enumerate() {
            let bad = |detail: String| StoreError::Corrupt {
                path: std::path::PathBuf::from("<annotation log>"),
                line: idx + 1,
                detail,
            };
            if record.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", record.len())));
            }
            let at = Timestamp(
                record[0]
                    .parse()
                    .map_err(|_| bad(format!("bad timestamp {:?}", record[0])))?,
            );
            let action = AnnotationAction::parse(&record[3])
                .ok_or_else(|| bad(format!("bad action {:?}", record[3])))?;
            self.push_event(
                at,
                CompanyId(record[1].clone()),
                SectorId(record[2].clone()),
                action,
            );
        }
        Ok(replay.records.len())
    }
}

/// Pure template fill: `[NAME], concerns [TAGS], is [description]. Sector:`.
/// Tags are joined with " and " (commas plus a final " and " beyond two).
pub fn fill_template(company: &Company, target: &str) -> FilledSample {
    let mut text = company.legal_name.clone();
    if !company.tags.is_empty() {
        text.push_str(", concerns ");
        text.push_str(&join_tags(&company.tags));
    }
    if !company.description.trim().is_empty() {
        text.push_str(", is ");
        text.push_str(company.description.trim());
    }
    text.push_str(". Sector:");
    FilledSample {
        input_text: text,
        target_text: target.to_string(),
    }
}

fn join_tags(tags: &[String]) -> String {
    match tags.len() {
        0 => String::new(),
        1 => tags[0].clone(),
        2 => format!("{} and {}", tags[0], tags[1]),
        _ => {
            let head = tags[..tags.len() - 1].join(", ");
            format!("{} and {}", head, tags[tags.len() - 1])
        }
    }
}
