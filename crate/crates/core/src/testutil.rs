//! Shared fixtures for unit tests.

use crate::company::{Company, CompanyStore, Timestamp};
use crate::framework::SectorTree;

/// Five-sector subtree (s3 with children s4..s7) with direct annotation
/// counts 10/22/23/8/16, the canonical roll-up exercise.
pub fn attribution_fixture() -> (SectorTree, CompanyStore) {
    let tree = SectorTree::from_records([
        ("s3", None, "enterprise software"),
        ("s4", Some("s3"), "horizontal software"),
        ("s5", Some("s3"), "vertical software"),
        ("s6", Some("s3"), "devops tooling"),
        ("s7", Some("s3"), "low code platforms"),
    ])
    .unwrap();
    let mut store = CompanyStore::new();
    let mut idx = 0usize;
    for (sector, count) in [("s3", 10), ("s4", 22), ("s5", 23), ("s6", 8), ("s7", 16)] {
        for _ in 0..count {
            let id = format!("c{idx:03}");
            idx += 1;
            store
                .upsert_company(Company::new(
                    id.as_str(),
                    format!("Company {idx}"),
                    vec!["software".to_string()],
                    "builds business software tools",
                ))
                .unwrap();
            store
                .annotate(&id.as_str().into(), &sector.into(), &tree, Timestamp(1))
                .unwrap();
        }
    }
    (tree, store)
}
