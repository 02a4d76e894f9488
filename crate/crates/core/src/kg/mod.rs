//! Typed knowledge graph over drugs, diseases, attribute values and
//! clinical narratives.
//!
//! A graph holds two disjoint kinds of facts:
//!
//! * observed atoms of closed-world predicates (`has_route`, `crf_treats`,
//!   `is_mentioned_in`, ...). Anything not stored is false.
//! * target atoms of open predicates (`treats`), each with an optional gold
//!   truth value. Which of them act as evidence and which are inferred is
//!   decided later, when a model is grounded.

mod filter;
mod lexicon;
mod tsv;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{drug_degrees, filter_high_degree_drugs, DrugFilter, FilterReport};
pub use lexicon::{build_narratives_graph, tokenize, Lexicon, Mention, NarrativeReport};
pub use tsv::{load_graph, parse_graph, read_narratives, save_graph, write_graph};

pub const TREATS: &str = "treats";
pub const CRF_TREATS: &str = "crf_treats";
pub const IS_MENTIONED_IN: &str = "is_mentioned_in";

/// Disease-to-attribute relations from the ontology graph.
pub const DISEASE_RELATIONS: [&str; 3] = [
    "has_associated_morphology",
    "has_course",
    "has_finding_site",
];
/// Drug-to-attribute relations from the ontology graph.
pub const DRUG_RELATIONS: [&str; 4] = [
    "has_route",
    "has_substance",
    "has_doseform",
    "has_pharmclass",
];

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<GraphError>,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown entity kind `{0}`")]
    UnknownKind(String),
    #[error("entity id is empty")]
    EmptyId,
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("predicate `{predicate}` expects {expected} arguments, got {got}")]
    Arity {
        predicate: String,
        expected: usize,
        got: usize,
    },
    #[error(
        "kind mismatch: argument {position} of `{predicate}` must be {expected}, got {got} `{id}`"
    )]
    KindMismatch {
        predicate: String,
        position: usize,
        expected: KindSet,
        got: EntityKind,
        id: String,
    },
    #[error("ambiguous entity `{id}` for argument {position} of `{predicate}`; declare it with a node row")]
    AmbiguousEntity {
        predicate: String,
        position: usize,
        id: String,
    },
    #[error("truth value {0} outside [0, 1]")]
    ValueRange(f64),
    #[error("contradictory values for {atom}: {first} vs {second}")]
    Contradiction {
        atom: String,
        first: f64,
        second: f64,
    },
    #[error("signature conflict for predicate `{0}`")]
    SignatureConflict(String),
    #[error("duplicate narrative id `{0}`")]
    DuplicateNarrative(String),
    #[error("duplicate lexicon phrase `{0}`")]
    DuplicatePhrase(String),
    #[error("empty lexicon phrase")]
    EmptyPhrase,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GraphError {
    pub(crate) fn at_line(self, line: usize) -> Self {
        GraphError::AtLine {
            line,
            source: Box::new(self),
        }
    }
}

/// Values closer than this are the same value when deduplicating atoms.
pub const VALUE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    Drug,
    Disease,
    AttributeValue,
    Narrative,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [
        EntityKind::Drug,
        EntityKind::Disease,
        EntityKind::AttributeValue,
        EntityKind::Narrative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Drug => "drug",
            EntityKind::Disease => "disease",
            EntityKind::AttributeValue => "attribute",
            EntityKind::Narrative => "narrative",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl std::str::FromStr for EntityKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "drug" => Ok(EntityKind::Drug),
            "disease" => Ok(EntityKind::Disease),
            "attribute" | "attribute_value" | "value" => Ok(EntityKind::AttributeValue),
            "narrative" | "text" => Ok(EntityKind::Narrative),
            other => Err(GraphError::UnknownKind(other.to_string())),
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Set of entity kinds accepted at one argument position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct KindSet(u8);

impl KindSet {
    pub const EMPTY: KindSet = KindSet(0);
    pub const ANY: KindSet = KindSet(0b1111);

    pub fn only(kind: EntityKind) -> Self {
        KindSet(kind.bit())
    }

    pub fn of(kinds: &[EntityKind]) -> Self {
        KindSet(kinds.iter().fold(0, |acc, k| acc | k.bit()))
    }

    pub fn contains(self, kind: EntityKind) -> bool {
        self.0 & kind.bit() != 0
    }

    pub fn intersect(self, other: KindSet) -> KindSet {
        KindSet(self.0 & other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn single(self) -> Option<EntityKind> {
        let mut it = self.iter();
        match (it.next(), it.next()) {
            (Some(k), None) => Some(k),
            _ => None,
        }
    }

    pub fn iter(self) -> impl Iterator<Item = EntityKind> {
        EntityKind::ALL
            .into_iter()
            .filter(move |k| self.contains(*k))
    }
}

impl fmt::Display for KindSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(EntityKind::as_str).collect();
        if names.is_empty() {
            f.write_str("(none)")
        } else {
            f.write_str(&names.join("|"))
        }
    }
}

/// Canonical form of an entity id: lowercase, single-spaced, trimmed.
pub fn normalize_id(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityRef {
    pub kind: EntityKind,
    pub id: String,
}

impl EntityRef {
    pub fn new(kind: EntityKind, id: &str) -> Result<Self, GraphError> {
        let id = normalize_id(id);
        if id.is_empty() {
            return Err(GraphError::EmptyId);
        }
        Ok(EntityRef { kind, id })
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateSignature {
    pub arg_kinds: Vec<KindSet>,
    /// Closed-world predicates are fully observed; open ones hold targets.
    pub closed: bool,
}

impl PredicateSignature {
    pub fn closed(arg_kinds: Vec<KindSet>) -> Self {
        PredicateSignature {
            arg_kinds,
            closed: true,
        }
    }

    pub fn open(arg_kinds: Vec<KindSet>) -> Self {
        PredicateSignature {
            arg_kinds,
            closed: false,
        }
    }

    pub fn arity(&self) -> usize {
        self.arg_kinds.len()
    }
}

/// The predicates used by the drug/disease rule templates.
pub fn standard_signatures() -> BTreeMap<String, PredicateSignature> {
    use EntityKind::*;
    let dd = vec![KindSet::only(Drug), KindSet::only(Disease)];
    let mut sigs = BTreeMap::new();
    sigs.insert(TREATS.to_string(), PredicateSignature::open(dd.clone()));
    sigs.insert(CRF_TREATS.to_string(), PredicateSignature::closed(dd));
    for r in DISEASE_RELATIONS {
        sigs.insert(
            r.to_string(),
            PredicateSignature::closed(vec![KindSet::only(Disease), KindSet::only(AttributeValue)]),
        );
    }
    for s in DRUG_RELATIONS {
        sigs.insert(
            s.to_string(),
            PredicateSignature::closed(vec![KindSet::only(Drug), KindSet::only(AttributeValue)]),
        );
    }
    sigs.insert(
        IS_MENTIONED_IN.to_string(),
        PredicateSignature::closed(vec![
            KindSet::of(&[Drug, Disease]),
            KindSet::only(Narrative),
        ]),
    );
    sigs
}

/// A predicate applied to entity arguments.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<EntityRef>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<EntityRef>) -> Self {
        Atom {
            predicate: predicate.to_lowercase(),
            args,
        }
    }

    pub fn treats(drug: &str, disease: &str) -> Result<Self, GraphError> {
        Ok(Atom::new(
            TREATS,
            vec![
                EntityRef::new(EntityKind::Drug, drug)?,
                EntityRef::new(EntityKind::Disease, disease)?,
            ],
        ))
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<&str> = self.args.iter().map(|a| a.id.as_str()).collect();
        write!(f, "{}({})", self.predicate, args.join(", "))
    }
}

/// A drug/disease pair, the argument tuple of `treats` and `crf_treats`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DrugDisease {
    pub drug: String,
    pub disease: String,
}

impl DrugDisease {
    pub fn new(drug: &str, disease: &str) -> Self {
        DrugDisease {
            drug: normalize_id(drug),
            disease: normalize_id(disease),
        }
    }

    pub fn treats_atom(&self) -> Atom {
        Atom {
            predicate: TREATS.to_string(),
            args: vec![
                EntityRef {
                    kind: EntityKind::Drug,
                    id: self.drug.clone(),
                },
                EntityRef {
                    kind: EntityKind::Disease,
                    id: self.disease.clone(),
                },
            ],
        }
    }
}

impl fmt::Display for DrugDisease {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.drug, self.disease)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    signatures: BTreeMap<String, PredicateSignature>,
    nodes: BTreeSet<EntityRef>,
    observed: BTreeMap<Atom, f64>,
    targets: BTreeMap<Atom, Option<f64>>,
}

impl Default for KnowledgeGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl KnowledgeGraph {
    /// Empty graph declaring the standard drug/disease predicates.
    pub fn new() -> Self {
        Self::with_signatures(standard_signatures())
    }

    pub fn with_signatures(signatures: BTreeMap<String, PredicateSignature>) -> Self {
        KnowledgeGraph {
            signatures,
            nodes: BTreeSet::new(),
            observed: BTreeMap::new(),
            targets: BTreeMap::new(),
        }
    }

    pub fn declare(&mut self, name: &str, sig: PredicateSignature) -> Result<(), GraphError> {
        let name = name.to_lowercase();
        match self.signatures.get(&name) {
            Some(existing) if *existing != sig => Err(GraphError::SignatureConflict(name)),
            Some(_) => Ok(()),
            None => {
                self.signatures.insert(name, sig);
                Ok(())
            }
        }
    }

    pub fn signatures(&self) -> &BTreeMap<String, PredicateSignature> {
        &self.signatures
    }

    pub fn signature(&self, predicate: &str) -> Option<&PredicateSignature> {
        self.signatures.get(predicate)
    }

    pub fn nodes(&self) -> &BTreeSet<EntityRef> {
        &self.nodes
    }

    pub fn contains_node(&self, node: &EntityRef) -> bool {
        self.nodes.contains(node)
    }

    pub fn add_node(&mut self, node: EntityRef) -> bool {
        self.nodes.insert(node)
    }

    /// Observed atoms of closed predicates with their truth values.
    pub fn observed(&self) -> &BTreeMap<Atom, f64> {
        &self.observed
    }

    /// Atoms of open predicates with optional gold values.
    pub fn targets(&self) -> &BTreeMap<Atom, Option<f64>> {
        &self.targets
    }

    pub fn observed_value(&self, atom: &Atom) -> f64 {
        self.observed.get(atom).copied().unwrap_or(0.0)
    }

    pub fn atom_count(&self) -> usize {
        self.observed.len() + self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.atom_count() == 0
    }

    /// Labeled `treats` pairs with their gold values.
    pub fn treats_pairs(&self) -> impl Iterator<Item = (DrugDisease, Option<f64>)> + '_ {
        self.targets
            .iter()
            .filter(|(a, _)| a.predicate == TREATS)
            .map(|(a, v)| {
                (
                    DrugDisease {
                        drug: a.args[0].id.clone(),
                        disease: a.args[1].id.clone(),
                    },
                    *v,
                )
            })
    }

    fn check_atom(&self, atom: &Atom) -> Result<&PredicateSignature, GraphError> {
        let sig = self
            .signatures
            .get(&atom.predicate)
            .ok_or_else(|| GraphError::UnknownPredicate(atom.predicate.clone()))?;
        if sig.arity() != atom.args.len() {
            return Err(GraphError::Arity {
                predicate: atom.predicate.clone(),
                expected: sig.arity(),
                got: atom.args.len(),
            });
        }
        for (position, (arg, allowed)) in atom.args.iter().zip(&sig.arg_kinds).enumerate() {
            if !allowed.contains(arg.kind) {
                return Err(GraphError::KindMismatch {
                    predicate: atom.predicate.clone(),
                    position: position + 1,
                    expected: *allowed,
                    got: arg.kind,
                    id: arg.id.clone(),
                });
            }
        }
        Ok(sig)
    }

    /// Adds an atom with a truth value. Closed predicates become observations,
    /// open predicates become targets carrying `value` as gold.
    pub fn add_atom(&mut self, atom: Atom, value: f64) -> Result<(), GraphError> {
        if !(0.0..=1.0).contains(&value) || !value.is_finite() {
            return Err(GraphError::ValueRange(value));
        }
        let closed = self.check_atom(&atom)?.closed;
        if closed {
            insert_consistent(&mut self.observed, atom.clone(), value)?;
        } else {
            self.insert_target(atom.clone(), Some(value))?;
        }
        self.nodes.extend(atom.args.iter().cloned());
        Ok(())
    }

    /// Adds an open-predicate atom whose gold value may be unknown.
    pub fn add_target(&mut self, atom: Atom, gold: Option<f64>) -> Result<(), GraphError> {
        if let Some(v) = gold {
            if !(0.0..=1.0).contains(&v) {
                return Err(GraphError::ValueRange(v));
            }
        }
        let sig = self.check_atom(&atom)?;
        if sig.closed {
            return Err(GraphError::Parse(format!(
                "`{}` is closed-world and cannot hold targets",
                atom.predicate
            )));
        }
        self.insert_target(atom.clone(), gold)?;
        self.nodes.extend(atom.args.iter().cloned());
        Ok(())
    }

    fn insert_target(&mut self, atom: Atom, gold: Option<f64>) -> Result<(), GraphError> {
        match self.targets.get_mut(&atom) {
            None => {
                self.targets.insert(atom, gold);
            }
            Some(slot) => match (*slot, gold) {
                (Some(a), Some(b)) if (a - b).abs() > VALUE_EPS => {
                    return Err(GraphError::Contradiction {
                        atom: atom.to_string(),
                        first: a,
                        second: b,
                    })
                }
                (None, Some(b)) => *slot = Some(b),
                _ => {}
            },
        }
        Ok(())
    }

    /// Resolves a raw id at an argument position to a registered or new node.
    pub(crate) fn resolve_arg(
        &self,
        predicate: &str,
        position: usize,
        raw_id: &str,
    ) -> Result<EntityRef, GraphError> {
        let sig = self
            .signatures
            .get(predicate)
            .ok_or_else(|| GraphError::UnknownPredicate(predicate.to_string()))?;
        let allowed = sig.arg_kinds[position];
        let id = normalize_id(raw_id);
        if id.is_empty() {
            return Err(GraphError::EmptyId);
        }
        let existing: Vec<EntityKind> = EntityKind::ALL
            .into_iter()
            .filter(|k| {
                self.nodes.contains(&EntityRef {
                    kind: *k,
                    id: id.clone(),
                })
            })
            .collect();
        let usable: Vec<EntityKind> = existing
            .iter()
            .copied()
            .filter(|k| allowed.contains(*k))
            .collect();
        let kind = match (usable.as_slice(), existing.first(), allowed.single()) {
            ([k], _, _) => *k,
            ([], Some(other), _) => {
                return Err(GraphError::KindMismatch {
                    predicate: predicate.to_string(),
                    position: position + 1,
                    expected: allowed,
                    got: *other,
                    id,
                })
            }
            ([], None, Some(k)) => k,
            _ => {
                return Err(GraphError::AmbiguousEntity {
                    predicate: predicate.to_string(),
                    position: position + 1,
                    id,
                })
            }
        };
        Ok(EntityRef { kind, id })
    }

    /// Keeps only the nodes accepted by `keep` and the atoms whose arguments
    /// all survive.
    pub fn retain_nodes<F: Fn(&EntityRef) -> bool>(&self, keep: F) -> KnowledgeGraph {
        let nodes: BTreeSet<EntityRef> = self.nodes.iter().filter(|n| keep(n)).cloned().collect();
        let alive = |a: &Atom| a.args.iter().all(|x| nodes.contains(x));
        KnowledgeGraph {
            signatures: self.signatures.clone(),
            observed: self
                .observed
                .iter()
                .filter(|(a, _)| alive(a))
                .map(|(a, v)| (a.clone(), *v))
                .collect(),
            targets: self
                .targets
                .iter()
                .filter(|(a, _)| alive(a))
                .map(|(a, v)| (a.clone(), *v))
                .collect(),
            nodes,
        }
    }

    /// Replaces the `treats` targets with `pairs`; other atoms are untouched.
    pub fn with_treats(&self, pairs: impl IntoIterator<Item = (DrugDisease, Option<f64>)>) -> Self {
        let mut g = self.clone();
        g.targets.retain(|a, _| a.predicate != TREATS);
        for (pair, gold) in pairs {
            let atom = pair.treats_atom();
            g.nodes.extend(atom.args.iter().cloned());
            g.targets.insert(atom, gold);
        }
        g
    }

    /// Union of two graphs. Identical nodes unify; atoms with the same
    /// predicate and arguments must agree on their value.
    pub fn merge(&self, other: &KnowledgeGraph) -> Result<KnowledgeGraph, GraphError> {
        let mut merged = self.clone();
        for (name, sig) in &other.signatures {
            merged.declare(name, sig.clone())?;
        }
        merged.nodes.extend(other.nodes.iter().cloned());
        for (atom, v) in &other.observed {
            insert_consistent(&mut merged.observed, atom.clone(), *v)?;
        }
        for (atom, gold) in &other.targets {
            merged.insert_target(atom.clone(), *gold)?;
        }
        Ok(merged)
    }
}

fn insert_consistent(
    map: &mut BTreeMap<Atom, f64>,
    atom: Atom,
    value: f64,
) -> Result<(), GraphError> {
    if let Some(prev) = map.get(&atom) {
        if (prev - value).abs() > VALUE_EPS {
            return Err(GraphError::Contradiction {
                atom: atom.to_string(),
                first: *prev,
                second: value,
            });
        }
        return Ok(());
    }
    map.insert(atom, value);
    Ok(())
}

/// Merges two graphs; see [`KnowledgeGraph::merge`].
pub fn merge_graphs(
    g1: &KnowledgeGraph,
    g2: &KnowledgeGraph,
) -> Result<KnowledgeGraph, GraphError> {
    g1.merge(g2)
}
