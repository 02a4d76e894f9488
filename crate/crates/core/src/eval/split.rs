use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::kg::{Atom, DrugDisease, EntityKind, KnowledgeGraph};

/// What happens to labeled edges that are neither observed nor predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leftover {
    /// Dropped from the universe.
    #[default]
    Remove,
    /// Kept as observed false.
    Negative,
}

impl std::str::FromStr for Leftover {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remove" => Ok(Leftover::Remove),
            "negative" => Ok(Leftover::Negative),
            _ => Err(format!("unknown leftover policy `{s}` (remove|negative)")),
        }
    }
}

/// Labeled `treats` edges in a stable order.
pub fn labeled_edges(g: &KnowledgeGraph) -> Vec<(DrugDisease, f64)> {
    g.treats_pairs()
        .filter_map(|(p, gold)| gold.map(|v| (p, v)))
        .collect()
}

/// Splits the diseases with labeled edges into two random halves and
/// builds one subgraph per half: its diseases, the drugs adjacent to them
/// and every non-drug, non-disease node, with the atoms among those nodes.
pub fn sample_disjoint_subgraphs(
    g: &KnowledgeGraph,
    seed: u64,
) -> Result<(KnowledgeGraph, KnowledgeGraph), EvalError> {
    let edges = labeled_edges(g);
    let mut diseases: Vec<String> = edges
        .iter()
        .map(|(p, _)| p.disease.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if diseases.len() < 2 {
        return Err(EvalError::TooSmall(format!(
            "{} disease(s) with labeled edges; need at least 2",
            diseases.len()
        )));
    }
    diseases.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = diseases.len() / 2;
    let build = |mine: &[String]| {
        let mine: BTreeSet<&str> = mine.iter().map(String::as_str).collect();
        let drugs: BTreeSet<&str> = edges
            .iter()
            .filter(|(p, _)| mine.contains(p.disease.as_str()))
            .map(|(p, _)| p.drug.as_str())
            .collect();
        let sub = g.retain_nodes(|n| match n.kind {
            EntityKind::Drug => drugs.contains(n.id.as_str()),
            EntityKind::Disease => mine.contains(n.id.as_str()),
            _ => true,
        });
        // unlabeled pairs carry no information for evaluation
        let labeled: Vec<_> = labeled_edges(&sub)
            .into_iter()
            .map(|(p, v)| (p, Some(v)))
            .collect();
        sub.with_treats(labeled)
    };
    Ok((build(&diseases[..half]), build(&diseases[half..])))
}

/// One subgraph prepared for grounding: observed, predicted and removed
/// edges partition its labeled `treats` edges.
#[derive(Debug, Clone)]
pub struct EvidenceSplit {
    /// Observed edges and targets keep their gold values; removed edges are
    /// absent (or observed false under [`Leftover::Negative`]).
    pub graph: KnowledgeGraph,
    pub targets: Vec<Atom>,
    pub observed: Vec<DrugDisease>,
    pub removed: Vec<DrugDisease>,
}

impl EvidenceSplit {
    pub fn gold(&self) -> Vec<f64> {
        self.targets
            .iter()
            .map(|a| self.graph.targets()[a].unwrap_or(0.0))
            .collect()
    }
}

/// Draws `round(prediction_fraction · n)` edges as targets and
/// `round(evidence_ratio · n)` of the rest as observations.
pub fn split_evidence(
    sub: &KnowledgeGraph,
    evidence_ratio: f64,
    prediction_fraction: f64,
    leftover: Leftover,
    seed: u64,
) -> Result<EvidenceSplit, EvalError> {
    if !(0.0..=1.0).contains(&prediction_fraction)
        || evidence_ratio < 0.0
        || evidence_ratio + prediction_fraction > 1.0 + 1e-12
    {
        return Err(EvalError::Config(format!(
            "evidence ratio {evidence_ratio} with prediction fraction {prediction_fraction} exceeds 1"
        )));
    }
    let mut edges = labeled_edges(sub);
    let n = edges.len();
    let n_pred = (prediction_fraction * n as f64).round() as usize;
    if n_pred == 0 {
        return Err(EvalError::TooSmall(format!(
            "{n} labeled edges leave no prediction targets"
        )));
    }
    let n_obs = ((evidence_ratio * n as f64).round() as usize).min(n - n_pred);
    edges.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (pred, rest) = edges.split_at(n_pred);
    let (obs, removed) = rest.split_at(n_obs);
    let mut pairs: Vec<(DrugDisease, Option<f64>)> = Vec::with_capacity(n);
    pairs.extend(pred.iter().map(|(p, v)| (p.clone(), Some(*v))));
    pairs.extend(obs.iter().map(|(p, v)| (p.clone(), Some(*v))));
    if leftover == Leftover::Negative {
        pairs.extend(removed.iter().map(|(p, _)| (p.clone(), Some(0.0))));
    }
    let mut targets: Vec<Atom> = pred.iter().map(|(p, _)| p.treats_atom()).collect();
    targets.sort();
    Ok(EvidenceSplit {
        graph: sub.with_treats(pairs),
        targets,
        observed: obs.iter().map(|(p, _)| p.clone()).collect(),
        removed: removed.iter().map(|(p, _)| p.clone()).collect(),
    })
}
