//! The hierarchical sector framework: a tree of sector nodes with stable ids,
//! globally unique names, deterministic depth-first numbering, and a
//! canonical fingerprint used as the retraining trigger.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::persistence::{decode_line, encode_line};

/// Opaque stable identifier for a sector node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SectorId(pub String);

impl SectorId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SectorId {
    fn from(s: &str) -> Self {
        SectorId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectorNode {
    pub id: SectorId,
    /// Lowercase, globally unique; this is the generation target string.
    pub name: String,
    /// `None` means the node hangs off the root sentinel.
    pub parent: Option<SectorId>,
    pub depth: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameworkError {
    #[error("duplicate sector name: {0}")]
    DuplicateName(String),
    #[error("duplicate sector id: {0}")]
    DuplicateId(String),
    #[error("unknown parent {parent} for node {node}")]
    UnknownParent { node: String, parent: String },
    #[error("unknown sector id: {0}")]
    UnknownId(String),
    #[error("empty sector name for node {0}")]
    EmptyName(String),
    #[error("cannot remove the root sentinel")]
    RootRemoval,
    #[error("cycle detected at node {0}")]
    Cycle(String),
    #[error("malformed framework record at line {line}: {detail}")]
    Malformed { line: usize, detail: String },
}

/// Structural difference between two framework snapshots.
///
/// `modified` carries nodes present in both trees whose name or parent
/// changed; together with `added`/`removed` this makes an empty delta
/// equivalent to equal fingerprints.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameworkDelta {
    pub added: BTreeSet<SectorId>,
    pub removed: BTreeSet<SectorId>,
    pub modified: BTreeSet<SectorId>,
    pub layer_added: bool,
}

impl FrameworkDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty()
            && self.removed.is_empty()
            && self.modified.is_empty()
            && !self.layer_added
    }
}

/// Immutable sector tree. Edits return new trees so the orchestrator can
/// diff old-vs-new snapshots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectorTree {
    nodes: BTreeMap<SectorId, SectorNode>,
    /// Children in insertion order, keyed by parent (`None` = root sentinel).
    root_children: Vec<SectorId>,
    children: BTreeMap<SectorId, Vec<SectorId>>,
    fingerprint: String,
}

impl SectorTree {
    pub fn empty() -> Self {
        let mut tree = SectorTree {
            nodes: BTreeMap::new(),
            root_children: Vec::new(),
            children: BTreeMap::new(),
            fingerprint: String::new(),
        };
        tree.fingerprint = tree.compute_fingerprint();
        tree
    }

    /// Number of sectors in the tree.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn node(&self, id: &SectorId) -> Option<&SectorNode> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &SectorId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node_by_name(&self, name: &str) -> Option<&SectorNode> {
        let needle = name.trim().to_lowercase();
        self.nodes.values().find(|n| n.name == needle)
    }

    pub fn children_of(&self, id: &SectorId) -> &[SectorId] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SectorNode> {
        self.nodes.values()
    }

    /// Maximum depth over all nodes (0 for an empty tree).
    pub fn max_depth(&self) -> usize {
        self.nodes.values().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Canonical fingerprint: hash over sorted (id, name, parent) triples,
    /// independent of sibling order.
    fn compute_fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (id, node) in &self.nodes {
            hasher.update(id.as_str().as_bytes());
            hasher.update([0u8]);
            hasher.update(node.name.as_bytes());
            hasher.update([0u8]);
            hasher.update(
                node.parent
                    .as_ref()
                    .map(|p| p.as_str())
                    .unwrap_or("")
                    .as_bytes(),
            );
            hasher.update([1u8]);
        }
        let digest = hasher.finalize();
        hex(&digest[..16])
    }

    fn validate_and_refresh(&mut self) -> Result<(), FrameworkError> {
        // Rebuild derived structure from scratch, validating as we go.
        let mut names = BTreeSet::new();
        for node in self.nodes.values() {
            if node.name.is_empty() {
                return Err(FrameworkError::EmptyName(node.id.to_string()));
            }
            if !names.insert(node.name.clone()) {
                return Err(FrameworkError::DuplicateName(node.name.clone()));
            }
            if let Some(parent) = &node.parent {
                if !self.nodes.contains_key(parent) {
                    return Err(FrameworkError::UnknownParent {
                        node: node.id.to_string(),
                        parent: parent.to_string(),
                    });
                }
            }
        }
        // Recompute depths; detects cycles (nodes unreachable from the root).
        let mut depths: BTreeMap<SectorId, usize> = BTreeMap::new();
        let mut frontier: Vec<SectorId> = self.root_children.clone();
        for id in &frontier {
            depths.insert(id.clone(), 1);
        }
        while let Some(id) = frontier.pop() {
            let depth = depths[&id];
            for child in self.children.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
                depths.insert(child.clone(), depth + 1);
                frontier.push(child.clone());
            }
        }
        if depths.len() != self.nodes.len() {
            let orphan = self
                .nodes
                .keys()
                .find(|id| !depths.contains_key(*id))
                .expect("some node must be unreachable");
            return Err(FrameworkError::Cycle(orphan.to_string()));
        }
        for (id, depth) in depths {
            self.nodes.get_mut(&id).expect("depth key exists").depth = depth;
        }
        self.fingerprint = self.compute_fingerprint();
        Ok(())
    }

    /// Build a tree from `(id, parent, name)` records in sibling order.
    pub fn from_records<'a, I>(records: I) -> Result<Self, FrameworkError>
    where
        I: IntoIterator<Item = (&'a str, Option<&'a str>, &'a str)>,
    {
        let mut tree = SectorTree::empty();
        for (id, parent, name) in records {
            let parent_id = parent.map(SectorId::from);
            tree.insert_node(SectorId::from(id), parent_id, name)?;
        }
        tree.validate_and_refresh()?;
        Ok(tree)
    }

    fn insert_node(
        &mut self,
        id: SectorId,
        parent: Option<SectorId>,
        name: &str,
    ) -> Result<(), FrameworkError> {
        if self.nodes.contains_key(&id) {
            return Err(FrameworkError::DuplicateId(id.to_string()));
        }
        let name = name.trim().to_lowercase();
        match &parent {
            Some(p) => self
                .children
                .entry(p.clone())
                .or_default()
                .push(id.clone()),
            None => self.root_children.push(id.clone()),
        }
        self.nodes.insert(
            id.clone(),
            SectorNode {
                id,
                name,
                parent,
                depth: 0,
            },
        );
        Ok(())
    }

    /// Add a node under `parent` (or the root sentinel); returns the new tree
    /// and the freshly assigned id.
    pub fn add_node(
        &self,
        parent: Option<&SectorId>,
        name: &str,
    ) -> Result<(SectorTree, SectorId), FrameworkError> {
        let name_norm = name.trim().to_lowercase();
        if name_norm.is_empty() {
            return Err(FrameworkError::EmptyName("<new>".to_string()));
        }
        if let Some(p) = parent {
            if !self.nodes.contains_key(p) {
                return Err(FrameworkError::UnknownParent {
                    node: name_norm,
                    parent: p.to_string(),
                });
            }
        }
        if self.nodes.values().any(|n| n.name == name_norm) {
            return Err(FrameworkError::DuplicateName(name_norm));
        }
        let mut tree = self.clone();
        let id = tree.fresh_id(&name_norm);
        tree.insert_node(id.clone(), parent.cloned(), &name_norm)?;
        tree.validate_and_refresh()?;
        Ok((tree, id))
    }

    fn fresh_id(&self, name: &str) -> SectorId {
        let slug: String = name
            .chars()
            .map(|c| if c.is_whitespace() { '-' } else { c })
            .collect();
        if !self.nodes.contains_key(&SectorId(slug.clone())) {
            return SectorId(slug);
        }
        let mut n = 2usize;
        loop {
            let candidate = SectorId(format!("{slug}-{n}"));
            if !self.nodes.contains_key(&candidate) {
                return candidate;
            }
            n += 1;
        }
    }

    /// Remove a node and its whole subtree; returns the new tree plus the
    /// removed ids (annotations to them become orphaned in the store).
    pub fn remove_node(
        &self,
        id: &SectorId,
    ) -> Result<(SectorTree, Vec<SectorId>), FrameworkError> {
        if !self.nodes.contains_key(id) {
            return Err(FrameworkError::UnknownId(id.to_string()));
        }
        let mut removed = Vec::new();
        let mut stack = vec![id.clone()];
        while let Some(current) = stack.pop() {
            for child in self.children_of(&current) {
                stack.push(child.clone());
            }
            removed.push(current);
        }
        let removed_set: BTreeSet<&SectorId> = removed.iter().collect();
        let mut tree = self.clone();
        tree.nodes.retain(|k, _| !removed_set.contains(k));
        tree.root_children.retain(|k| !removed_set.contains(k));
        for siblings in tree.children.values_mut() {
            siblings.retain(|k| !removed_set.contains(k));
        }
        tree.children.retain(|k, _| !removed_set.contains(k));
        tree.validate_and_refresh()?;
        Ok((tree, removed))
    }

    /// Deterministic preorder traversal: children in insertion order, a
    /// bijection onto 1..=M.
    pub fn depth_first_index(&self) -> Vec<SectorId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<&SectorId> = self.root_children.iter().rev().collect();
        while let Some(id) = stack.pop() {
            out.push(id.clone());
            for child in self.children_of(id).iter().rev() {
                stack.push(child);
            }
        }
        out
    }

    /// Serialize to the framework file format (one record per node:
    /// id, parent id, name, ordinal), in depth-first order.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        for id in self.depth_first_index() {
            let node = &self.nodes[&id];
            let ordinal = match &node.parent {
                Some(p) => self.children_of(p).iter().position(|c| c == &id),
                None => self.root_children.iter().position(|c| c == &id),
            }
            .expect("node is listed under its parent");
            out.push_str(&encode_line(&[
                id.as_str(),
                node.parent.as_ref().map(|p| p.as_str()).unwrap_or(""),
                &node.name,
                &ordinal.to_string(),
            ]));
            out.push('\n');
        }
        out
    }

    /// Parse the framework file format. The root sentinel is implied; blank
    /// lines and `#` comments are skipped.
    pub fn from_document(document: &str) -> Result<Self, FrameworkError> {
        let mut records: Vec<(SectorId, Option<SectorId>, String, usize)> = Vec::new();
        for (idx, line) in document.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields = decode_line(line);
            if fields.len() != 4 {
                return Err(FrameworkError::Malformed {
                    line: idx + 1,
                    detail: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let ordinal: usize = fields[3].parse().map_err(|_| FrameworkError::Malformed {
                line: idx + 1,
                detail: format!("bad ordinal {:?}", fields[3]),
            })?;
            let parent = if fields[1].is_empty() {
                None
            } else {
                Some(SectorId(fields[1].clone()))
            };
            records.push((SectorId(fields[0].clone()), parent, fields[2].clone(), ordinal));
        }
        // Sibling order comes from the recorded ordinals.
        records.sort_by(|a, b| (&a.1, a.3).cmp(&(&b.1, b.3)));
        let mut tree = SectorTree::empty();
        // Insert parents before children regardless of file order.
        let mut pending: Vec<(SectorId, Option<SectorId>, String)> = records
            .into_iter()
            .map(|(id, parent, name, _)| (id, parent, name))
            .collect();
        let mut progressed = true;
        while !pending.is_empty() && progressed {
            progressed = false;
            let mut rest = Vec::new();
            for (id, parent, name) in pending {
                let ready = match &parent {
                    None => true,
                    Some(p) => tree.nodes.contains_key(p),
                };
                if ready {
                    tree.insert_node(id, parent, &name)?;
                    progressed = true;
                } else {
                    rest.push((id, parent, name));
                }
            }
            pending = rest;
        }
        if let Some((id, parent, _)) = pending.into_iter().next() {
            return Err(FrameworkError::UnknownParent {
                node: id.to_string(),
                parent: parent.map(|p| p.to_string()).unwrap_or_default(),
            });
        }
        tree.validate_and_refresh()?;
        Ok(tree)
    }
}

/// Node-level difference between two framework snapshots.
pub fn diff_frameworks(old: &SectorTree, new: &SectorTree) -> FrameworkDelta {
    let mut delta = FrameworkDelta::default();
    for id in new.nodes.keys() {
        if !old.nodes.contains_key(id) {
            delta.added.insert(id.clone());
        }
    }
    for (id, node) in &old.nodes {
        match new.nodes.get(id) {
            None => {
                delta.removed.insert(id.clone());
            }
            Some(other) => {
                if other.name != node.name || other.parent != node.parent {
                    delta.modified.insert(id.clone());
                }
            }
        }
    }
    delta.layer_added = new.max_depth() > old.max_depth();
    delta
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
