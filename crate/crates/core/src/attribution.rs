//! Depth-first bottom-up annotation attribution: sectors short of the
//! eligibility threshold roll their annotations up to ancestors, and the
//! eligible sectors become the training label space.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::company::{fill_template, CompanyId, CompanyStore, FilledSample};
use crate::framework::{SectorId, SectorTree};

/// Outcome of attribution. Effective sets are pairwise disjoint and, together
/// with `excluded_companies`, partition the annotated companies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionResult {
    /// Eligible sectors in depth-first index order with their effective
    /// company sets (direct annotations plus roll-ups from ineligible
    /// descendants).
    pub eligible: Vec<(SectorId, BTreeSet<CompanyId>)>,
    /// Annotated companies that reached the root without an eligible
    /// ancestor; excluded from training but recorded.
    pub excluded_companies: BTreeSet<CompanyId>,
    pub threshold_used: usize,
}

impl AttributionResult {
    pub fn eligible_ids(&self) -> Vec<&SectorId> {
        self.eligible.iter().map(|(id, _)| id).collect()
    }

    pub fn effective_set(&self, id: &SectorId) -> Option<&BTreeSet<CompanyId>> {
        self.eligible.iter().find(|(s, _)| s == id).map(|(_, set)| set)
    }
}

/// Per-sector report row emitted by the `attribute` CLI subcommand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionReportRow {
    pub sector_id: SectorId,
    pub sector_name: String,
    pub direct_count: usize,
    pub effective_count: usize,
    pub eligible: bool,
}

/// Run bottom-up attribution over the tree's active annotations.
///
/// Nodes are processed leaf-to-root; a node's effective set is its direct
/// annotations plus the effective sets of its ineligible children (eligible
/// children keep theirs). Effective sets that reach past the root without
/// meeting the threshold land in `excluded_companies`.
pub fn attribute(
    tree: &SectorTree,
    store: &CompanyStore,
    threshold: usize,
) -> AttributionResult {
    let threshold = threshold.max(1);
    let order = tree.depth_first_index();

    let mut direct: BTreeMap<SectorId, BTreeSet<CompanyId>> = BTreeMap::new();
    for company in store.companies() {
        if let Some(sector) = store.active_sector(&company.id) {
            if tree.contains(sector) {
                direct
                    .entry(sector.clone())
                    .or_default()
                    .insert(company.id.clone());
            }
        }
    }

    let mut effective: BTreeMap<SectorId, BTreeSet<CompanyId>> = BTreeMap::new();
    let mut eligible_flags: BTreeMap<SectorId, bool> = BTreeMap::new();

    // Reverse preorder lists every child before its parent.
    for id in order.iter().rev() {
        let mut set = direct.remove(id).unwrap_or_default();
        for child in tree.children_of(id) {
            if !eligible_flags.get(child).copied().unwrap_or(false) {
                if let Some(rolled) = effective.remove(child) {
                    set.extend(rolled);
                }
            }
        }
        eligible_flags.insert(id.clone(), set.len() >= threshold);
        effective.insert(id.clone(), set);
    }

    let mut eligible = Vec::new();
    let mut excluded = BTreeSet::new();
    for id in &order {
        if eligible_flags[id] {
            eligible.push((id.clone(), effective.remove(id).unwrap_or_default()));
        } else if tree.node(id).and_then(|n| n.parent.as_ref()).is_none() {
            // Ineligible root-level subtree: whatever is left here was never
            // captured by an eligible ancestor.
            if let Some(set) = effective.remove(id) {
                excluded.extend(set);
            }
        }
    }

    AttributionResult {
        eligible,
        excluded_companies: excluded,
        threshold_used: threshold,
    }
}

/// Build the per-sector report (direct count, rolled-up count, eligibility).
pub fn attribution_report(
    tree: &SectorTree,
    store: &CompanyStore,
    result: &AttributionResult,
) -> Vec<AttributionReportRow> {
    let eligible: BTreeMap<&SectorId, usize> = result
        .eligible
        .iter()
        .map(|(id, set)| (id, set.len()))
        .collect();
    tree.depth_first_index()
        .into_iter()
        .map(|id| {
            let direct_count = store
                .active_members(&id)
                .len();
            let effective_count = eligible.get(&id).copied().unwrap_or(0);
            AttributionReportRow {
                sector_name: tree.node(&id).map(|n| n.name.clone()).unwrap_or_default(),
                direct_count,
                effective_count,
                eligible: eligible.contains_key(&id),
                sector_id: id,
            }
        })
        .collect()
}

/// A sector's training samples, relabeled to the eligible sector's name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectorSamples {
    pub sector_id: SectorId,
    pub sector_name: String,
    pub samples: Vec<FilledSample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainingSet {
    pub per_sector: Vec<SectorSamples>,
    /// Companies referenced by the attribution result but missing from the
    /// store; skipped rather than failing the build.
    pub warnings: Vec<CompanyId>,
}

impl TrainingSet {
    pub fn total_samples(&self) -> usize {
        self.per_sector.iter().map(|s| s.samples.len()).sum()
    }
}

/// Render every attributed company with the eligible sector's name as the
/// generation target (rolled-up companies are relabeled to the ancestor).
pub fn build_training_set(
    result: &AttributionResult,
    store: &CompanyStore,
    tree: &SectorTree,
) -> TrainingSet {
    let mut out = TrainingSet::default();
    for (sector_id, members) in &result.eligible {
        let sector_name = tree
            .node(sector_id)
            .map(|n| n.name.clone())
            .unwrap_or_default();
        let mut samples = Vec::with_capacity(members.len());
        for company_id in members {
            match store.company(company_id) {
                Some(company) => samples.push(fill_template(company, &sector_name)),
                None => out.warnings.push(company_id.clone()),
            }
        }
        out.per_sector.push(SectorSamples {
            sector_id: sector_id.clone(),
            sector_name,
            samples,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::company::{Company, Timestamp};
    use crate::testutil::attribution_fixture;

    #[test]
    fn fixture_rolls_sparse_children_into_parent() {
        let (tree, store) = attribution_fixture();
        let result = attribute(&tree, &store, 20);
        let summary: Vec<(String, usize)> = result
            .eligible
            .iter()
            .map(|(id, set)| (id.as_str().to_string(), set.len()))
            .collect();
        assert_eq!(
            summary,
            vec![
                ("s3".to_string(), 34),
                ("s4".to_string(), 22),
                ("s5".to_string(), 23),
            ]
        );
        assert!(result.excluded_companies.is_empty());
    }

    #[test]
    fn baseline_snapshot_counts_match_direct_annotations() {
        let (tree, store) = attribution_fixture();
        let snapshot = store.snapshot_baseline(&tree, Timestamp(5));
        let counts: Vec<(String, usize)> = snapshot
            .sectors
            .iter()
            .map(|(id, s)| (id.to_string(), s.count_at_baseline))
            .collect();
        assert_eq!(
            counts,
            vec![
                ("s3".to_string(), 10),
                ("s4".to_string(), 22),
                ("s5".to_string(), 23),
                ("s6".to_string(), 8),
                ("s7".to_string(), 16),
            ]
        );
    }

    #[test]
    fn no_annotations_yields_nothing() {
        let (tree, _) = attribution_fixture();
        let store = CompanyStore::new();
        let result = attribute(&tree, &store, 20);
        assert!(result.eligible.is_empty());
        assert!(result.excluded_companies.is_empty());
    }

    #[test]
    fn chain_rolls_up_until_threshold() {
        // root -> a -> b -> c with direct counts a:12, b:5, c:5.
        let tree = SectorTree::from_records([
            ("a", None, "alpha"),
            ("b", Some("a"), "beta"),
            ("c", Some("b"), "gamma"),
        ])
        .unwrap();
        let mut store = CompanyStore::new();
        let mut idx = 0;
        for (sector, count) in [("a", 12), ("b", 5), ("c", 5)] {
            for _ in 0..count {
                let id = format!("c{idx:03}");
                idx += 1;
                store
                    .upsert_company(Company::new(id.as_str(), id.clone(), vec![], ""))
                    .unwrap();
                store
                    .annotate(&id.as_str().into(), &sector.into(), &tree, Timestamp(1))
                    .unwrap();
            }
        }
        let result = attribute(&tree, &store, 20);
        assert_eq!(result.eligible.len(), 1);
        assert_eq!(result.eligible[0].0, SectorId::from("a"));
        assert_eq!(result.eligible[0].1.len(), 22);
    }

    #[test]
    fn unreached_annotations_are_excluded() {
        let tree = SectorTree::from_records([("a", None, "alpha")]).unwrap();
        let mut store = CompanyStore::new();
        for i in 0..3 {
            let id = format!("c{i}");
            store
                .upsert_company(Company::new(id.as_str(), id.clone(), vec![], ""))
                .unwrap();
            store
                .annotate(&id.as_str().into(), &"a".into(), &tree, Timestamp(1))
                .unwrap();
        }
        let result = attribute(&tree, &store, 20);
        assert!(result.eligible.is_empty());
        assert_eq!(result.excluded_companies.len(), 3);
    }

    #[test]
    fn threshold_one_keeps_every_annotated_sector() {
        let (tree, store) = attribution_fixture();
        let result = attribute(&tree, &store, 1);
        assert_eq!(result.eligible.len(), 5);
        for (id, set) in &result.eligible {
            assert_eq!(set, &store.active_members(id));
        }
    }

    #[test]
    fn raising_threshold_never_adds_sectors() {
        let (tree, store) = attribution_fixture();
        let mut prev = usize::MAX;
        for threshold in [1, 5, 10, 20, 30, 50] {
            let count = attribute(&tree, &store, threshold).eligible.len();
            assert!(count <= prev);
            prev = count;
        }
    }

    #[test]
    fn partition_invariant_on_fixture() {
        let (tree, store) = attribution_fixture();
        for threshold in [1, 10, 20, 40] {
            let result = attribute(&tree, &store, threshold);
            let mut seen = BTreeSet::new();
            for (_, set) in &result.eligible {
                for c in set {
                    assert!(seen.insert(c.clone()), "company in two effective sets");
                }
            }
            for c in &result.excluded_companies {
                assert!(seen.insert(c.clone()), "excluded company also attributed");
            }
            let all: BTreeSet<CompanyId> = store
                .companies()
                .filter(|c| store.active_sector(&c.id).is_some())
                .map(|c| c.id.clone())
                .collect();
            assert_eq!(seen, all);
        }
    }

    #[test]
    fn training_set_relabels_to_ancestor() {
        let (tree, store) = attribution_fixture();
        let result = attribute(&tree, &store, 20);
        let set = build_training_set(&result, &store, &tree);
        assert!(set.warnings.is_empty());
        let by_name: BTreeMap<String, usize> = set
            .per_sector
            .iter()
            .map(|s| (s.sector_name.clone(), s.samples.len()))
            .collect();
        assert_eq!(by_name["enterprise software"], 34);
        assert_eq!(by_name["horizontal software"], 22);
        assert_eq!(by_name["vertical software"], 23);
        // Every rolled-up sample carries the ancestor's name as target.
        for sector in &set.per_sector {
            for sample in &sector.samples {
                assert_eq!(sample.target_text, sector.sector_name);
                assert!(sample.input_text.ends_with("Sector:"));
            }
        }
    }

    #[test]
    fn empty_result_builds_empty_set() {
        let (tree, store) = attribution_fixture();
        let result = AttributionResult {
            eligible: vec![],
            excluded_companies: BTreeSet::new(),
            threshold_used: 20,
        };
        let set = build_training_set(&result, &store, &tree);
        assert_eq!(set.total_samples(), 0);
    }

    #[test]
    fn missing_company_is_warned_not_fatal() {
        let (tree, store) = attribution_fixture();
        let mut result = attribute(&tree, &store, 20);
        result.eligible[0].1.insert("ghost".into());
        let set = build_training_set(&result, &store, &tree);
        assert_eq!(set.warnings, vec![CompanyId::from("ghost")]);
    }

    #[test]
    fn report_lists_direct_and_effective_counts() {
        let (tree, store) = attribution_fixture();
        let result = attribute(&tree, &store, 20);
        let report = attribution_report(&tree, &store, &result);
        let s3 = report.iter().find(|r| r.sector_id.as_str() == "s3").unwrap();
        assert_eq!(s3.direct_count, 10);
        assert_eq!(s3.effective_count, 34);
        assert!(s3.eligible);
        let s6 = report.iter().find(|r| r.sector_id.as_str() == "s6").unwrap();
        assert_eq!(s6.direct_count, 8);
        assert!(!s6.eligible);
    }
}
