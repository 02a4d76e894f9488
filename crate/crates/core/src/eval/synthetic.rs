//! Planted block-structured graphs for exercising the full pipeline.
//!
//! Drug `i` and disease `j` belong to blocks `i mod B` and `j mod B`. Block
//! `b` owns one attribute value `v{b}`, linked to its drugs by
//! `has_pharmclass` and to its diseases by `has_finding_site`. Pairs inside
//! a block are usually positive, pairs across blocks rarely are.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{Atom, DrugDisease, EntityKind, EntityRef, KnowledgeGraph, IS_MENTIONED_IN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub drugs: usize,
    pub diseases: usize,
    pub blocks: usize,
    /// Labeled diseases per drug.
    pub pairs_per_drug: usize,
    /// Chance that a labeled pair is drawn from the drug's own block.
    pub in_block_fraction: f64,
    pub p_in: f64,
    pub p_out: f64,
    /// CRF hit rates on positive and negative pairs.
    pub crf_tpr: f64,
    pub crf_fpr: f64,
    pub narratives: usize,
    /// Drugs and diseases mentioned per narrative, from one block.
    pub mentions: usize,
    /// Chance that a narrative also mentions a random off-block drug.
    pub narrative_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            drugs: 60,
            diseases: 60,
            blocks: 8,
            pairs_per_drug: 7,
            in_block_fraction: 0.3,
            p_in: 0.75,
            p_out: 0.04,
            crf_tpr: 0.6,
            crf_fpr: 0.1,
            narratives: 120,
            mentions: 2,
            narrative_noise: 0.3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub ontologies: KnowledgeGraph,
    pub narratives: KnowledgeGraph,
    /// Labeled `treats` edges only.
    pub labels: KnowledgeGraph,
    /// Binary CRF hits.
    pub crf: Vec<(DrugDisease, f64)>,
}

impl SyntheticData {
    pub fn base_rate(&self) -> f64 {
        let gold: Vec<f64> = self.labels.treats_pairs().filter_map(|p| p.1).collect();
        gold.iter().sum::<f64>() / gold.len() as f64
    }
}

fn drug(i: usize) -> EntityRef {
    EntityRef::new(EntityKind::Drug, &format!("drug{i:02}")).unwrap()
}

fn disease(j: usize) -> EntityRef {
    EntityRef::new(EntityKind::Disease, &format!("disease{j:02}")).unwrap()
}

pub fn planted_graph(cfg: &SyntheticConfig) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let blocks = cfg.blocks.max(1);
    let value = |b: usize| EntityRef::new(EntityKind::AttributeValue, &format!("v{b}")).unwrap();

    let mut ontologies = KnowledgeGraph::new();
    for i in 0..cfg.drugs {
        let a = Atom::new("has_pharmclass", vec![drug(i), value(i % blocks)]);
        ontologies.add_atom(a, 1.0).unwrap();
    }
    for j in 0..cfg.diseases {
        let a = Atom::new("has_finding_site", vec![disease(j), value(j % blocks)]);
        ontologies.add_atom(a, 1.0).unwrap();
    }

    let mut labels = KnowledgeGraph::new();
    let mut crf = Vec::new();
    for i in 0..cfg.drugs {
        let b = i % blocks;
        let (mut inside, mut outside): (Vec<usize>, Vec<usize>) =
            (0..cfg.diseases).partition(|j| j % blocks == b);
        inside.shuffle(&mut rng);
        outside.shuffle(&mut rng);
        let mut chosen = BTreeSet::new();
        while chosen.len() < cfg.pairs_per_drug.min(cfg.diseases) {
            let from_inside = rng.gen::<f64>() < cfg.in_block_fraction;
            let pick = if from_inside {
                inside.pop()
            } else {
                outside.pop()
            }
            .or_else(|| inside.pop())
            .or_else(|| outside.pop());
            let Some(j) = pick else { break };
            let positive = rng.gen::<f64>() < if j % blocks == b { cfg.p_in } else { cfg.p_out };
            let hit = rng.gen::<f64>() < if positive { cfg.crf_tpr } else { cfg.crf_fpr };
            let pair = DrugDisease::new(&drug(i).id, &disease(j).id);
            labels
                .add_atom(pair.treats_atom(), positive as u8 as f64)
                .unwrap();
            if hit {
                crf.push((pair, 1.0));
            }
            chosen.insert(j);
        }
    }

    let mut narratives = KnowledgeGraph::new();
    let width = (cfg.narratives.max(1) - 1).to_string().len();
    for t in 0..cfg.narratives {
        let b = rng.gen_range(0..blocks);
        let text = EntityRef::new(EntityKind::Narrative, &format!("note{t:0width$}")).unwrap();
        let mut members: Vec<EntityRef> = Vec::new();
        let block_drugs: Vec<usize> = (b..cfg.drugs).step_by(blocks).collect();
        let block_diseases: Vec<usize> = (b..cfg.diseases).step_by(blocks).collect();
        members.extend(
            block_drugs
                .choose_multiple(&mut rng, cfg.mentions)
                .map(|i| drug(*i)),
        );
        members.extend(
            block_diseases
                .choose_multiple(&mut rng, cfg.mentions)
                .map(|j| disease(*j)),
        );
        if cfg.drugs > 0 && rng.gen::<f64>() < cfg.narrative_noise {
            members.push(drug(rng.gen_range(0..cfg.drugs)));
        }
        for m in members {
            narratives
                .add_atom(Atom::new(IS_MENTIONED_IN, vec![m, text.clone()]), 1.0)
                .unwrap();
        }
    }

    SyntheticData {
        ontologies,
        narratives,
        labels,
        crf,
    }
}
