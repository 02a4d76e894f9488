use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{normalize_id, EntityKind, EntityRef, KnowledgeGraph};

/// Which drugs to drop from a graph.
#[derive(Debug, Clone, PartialEq)]
pub enum DrugFilter {
    /// Drop drugs labeled against more than this many distinct diseases.
    MaxDegree(usize),
    Explicit(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FilterReport {
    /// Removed drug ids with their degree.
    pub removed: Vec<(String, usize)>,
    /// Requested ids that are not drugs in the graph.
    pub missing: Vec<String>,
    pub atoms_removed: usize,
}

/// Number of distinct diseases per drug among the labeled `treats` pairs.
pub fn drug_degrees(g: &KnowledgeGraph) -> BTreeMap<String, usize> {
    let mut diseases: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (pair, _) in g.treats_pairs() {
        diseases.entry(pair.drug).or_default().insert(pair.disease);
    }
    g.nodes()
        .iter()
        .filter(|n| n.kind == EntityKind::Drug)
        .map(|n| (n.id.clone(), diseases.get(&n.id).map_or(0, BTreeSet::len)))
        .collect()
}

pub fn filter_high_degree_drugs(
    g: &KnowledgeGraph,
    filter: &DrugFilter,
) -> (KnowledgeGraph, FilterReport) {
    let degrees = drug_degrees(g);
    let mut report = FilterReport::default();
    let doomed: BTreeSet<String> = match filter {
        DrugFilter::MaxDegree(max) => degrees
            .iter()
            .filter(|(_, d)| **d > *max)
            .map(|(id, _)| id.clone())
            .collect(),
        DrugFilter::Explicit(ids) => {
            let mut set = BTreeSet::new();
            for raw in ids {
                let id = normalize_id(raw);
                if degrees.contains_key(&id) {
                    set.insert(id);
                } else {
                    report.missing.push(id);
                }
            }
            set
        }
    };
    report.removed = doomed.iter().map(|id| (id.clone(), degrees[id])).collect();
    let before = g.atom_count();
    let filtered =
        g.retain_nodes(|n: &EntityRef| !(n.kind == EntityKind::Drug && doomed.contains(&n.id)));
    report.atoms_removed = before - filtered.atom_count();
    (filtered, report)
}
