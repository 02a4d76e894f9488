use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::metrics::{pr_auc, pr_curve, roc_auc, PrPoint};
use super::split::{sample_disjoint_subgraphs, split_evidence, EvidenceSplit, Leftover};
use super::EvalError;
use crate::ground::ground;
use crate::infer::{map_inference, AdmmConfig};
use crate::kg::{Atom, DrugDisease, KnowledgeGraph, CRF_TREATS};
use crate::learn::{init_weights, learn_weights, LearnConfig, WeightEntry};
use crate::rules::{default_rule_templates, GraphSources, RuleSet};

/// Which evidence a model uses. CRF alone means the raw text-only baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variant {
    pub crf: bool,
    pub ontologies: bool,
    pub narratives: bool,
}

impl Variant {
    pub fn is_text_only(&self) -> bool {
        self.crf && !self.ontologies && !self.narratives
    }

    pub fn rules(&self, squared: bool) -> RuleSet {
        default_rule_templates(
            GraphSources {
                ontologies: self.ontologies,
                narratives: self.narratives,
            },
            self.crf,
        )
        .with_hinge(squared)
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut v = Variant {
            crf: false,
            ontologies: false,
            narratives: false,
        };
        for part in s.split('+').map(str::trim) {
            match part.to_lowercase().as_str() {
                "text_only" | "text" | "crf" => v.crf = true,
                "ontologies" | "ont" => v.ontologies = true,
                "narratives" | "narr" => v.narratives = true,
                "priors" => {}
                "graph" => {
                    v.ontologies = true;
                    v.narratives = true;
                }
                "full" => {
                    v.crf = true;
                    v.ontologies = true;
                    v.narratives = true;
                }
                other => return Err(format!("unknown model variant part `{other}`")),
            }
        }
        Ok(v)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match (self.crf, self.ontologies, self.narratives) {
            (true, false, false) => "text_only",
            (false, true, false) => "ontologies",
            (false, false, true) => "narratives",
            (false, true, true) => "graph",
            (true, true, false) => "ontologies+crf",
            (true, false, true) => "narratives+crf",
            (true, true, true) => "full",
            (false, false, false) => "priors",
        };
        f.write_str(name)
    }
}

impl Serialize for Variant {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hinge {
    Linear,
    #[default]
    Squared,
}

impl FromStr for Hinge {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Hinge::Linear),
            "squared" => Ok(Hinge::Squared),
            _ => Err(format!("unknown hinge `{s}` (linear|squared)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub runs: usize,
    pub prediction_fraction: f64,
    pub evidence_ratios: Vec<f64>,
    pub variants: Vec<Variant>,
    pub leftover: Leftover,
    pub hinge: Hinge,
    pub roc: bool,
    pub admm: AdmmConfig,
    pub learn: LearnConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            runs: 100,
            prediction_fraction: 0.25,
            evidence_ratios: vec![0.0, 0.25, 0.5, 0.75],
            variants: vec!["full".parse().unwrap()],
            leftover: Leftover::Remove,
            hinge: Hinge::Squared,
            roc: false,
            admm: AdmmConfig::default(),
            learn: LearnConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Config(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.variants.is_empty() || self.evidence_ratios.is_empty() {
            return bad("need at least one variant and one evidence ratio".into());
        }
        if !(self.prediction_fraction > 0.0 && self.prediction_fraction <= 1.0) {
            return bad(format!(
                "prediction fraction {} outside (0, 1]",
                self.prediction_fraction
            ));
        }
        for r in &self.evidence_ratios {
            if !(0.0..=1.0).contains(r) || r + self.prediction_fraction > 1.0 + 1e-12 {
                return bad(format!(
                    "evidence ratio {r} plus prediction fraction {} exceeds 1",
                    self.prediction_fraction
                ));
            }
        }
        self.admm
            .check()
            .map_err(|e| EvalError::Config(e.to_string()))?;
        self.learn
            .check()
            .map_err(|e| EvalError::Config(e.to_string()))
    }
}

/// Everything a run reads: one merged graph holding all labeled `treats`
/// edges plus whichever graphs and CRF hits were supplied.
#[derive(Debug, Clone)]
pub struct ExperimentInputs {
    pub graph: KnowledgeGraph,
    pub crf: Option<HashMap<DrugDisease, f64>>,
    pub has_ontologies: bool,
    pub has_narratives: bool,
}

impl ExperimentInputs {
    pub fn new(
        ontologies: Option<&KnowledgeGraph>,
        narratives: Option<&KnowledgeGraph>,
        labels: Option<&KnowledgeGraph>,
        crf: Option<&[(DrugDisease, f64)]>,
    ) -> Result<Self, EvalError> {
        let mut graph = KnowledgeGraph::new();
        for g in [labels, ontologies, narratives].into_iter().flatten() {
            graph = graph.merge(g)?;
        }
        if let Some(hits) = crf {
            for (pair, v) in hits {
                let atom = Atom::new(CRF_TREATS, pair.treats_atom().args);
                graph.add_atom(atom, *v)?;
            }
        }
        Ok(ExperimentInputs {
            graph,
            crf: crf.map(|c| c.iter().cloned().collect()),
            has_ontologies: ontologies.is_some(),
            has_narratives: narratives.is_some(),
        })
    }

    fn check_variant(&self, v: &Variant) -> Result<(), EvalError> {
        let missing = if v.crf && self.crf.is_none() {
            Some("CRF predictions")
        } else if v.ontologies && !self.has_ontologies {
            Some("an ontologies graph")
        } else if v.narratives && !self.has_narratives {
            Some("a narratives graph")
        } else {
            None
        };
        match missing {
            Some(what) => Err(EvalError::MissingInput(format!(
                "variant `{v}` needs {what}"
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub variant: Variant,
    pub evidence_ratio: f64,
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub roc_auc: Option<f64>,
    pub error: Option<String>,
    pub targets: usize,
    pub positives: usize,
    pub ground_rules: usize,
    pub admm_iterations: usize,
    pub admm_converged: bool,
    pub weights: Vec<WeightEntry>,
    #[serde(skip)]
    pub pr_curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub evidence_ratio: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummaryRow {
    pub variant: Variant,
    pub evidence_ratio: f64,
    pub rule: String,
    pub mean_relative_weight: Option<f64>,
    pub mean_groundings: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    pub weights: Vec<WeightSummaryRow>,
}

/// Splitmix64 finalizer over a sequence of stream labels.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, p| mix(acc ^ mix(*p)))
}

const STREAM_SUBGRAPHS: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_TEST: u64 = 3;

struct Outcome {
    auc: f64,
    roc: Option<f64>,
    positives: usize,
    ground_rules: usize,
    admm_iterations: usize,
    admm_converged: bool,
    weights: Vec<WeightEntry>,
    curve: Vec<PrPoint>,
}

fn labels_of(split: &EvidenceSplit) -> Vec<bool> {
    split.gold().iter().map(|g| *g >= 0.5).collect()
}

fn score(
    cfg: &ExperimentConfig,
    inputs: &ExperimentInputs,
    variant: &Variant,
    train: &EvidenceSplit,
    test: &EvidenceSplit,
) -> Result<Outcome, EvalError> {
    let labels = labels_of(test);
    let mut outcome = Outcome {
        auc: 0.0,
        roc: None,
        positives: labels.iter().filter(|l| **l).count(),
        ground_rules: 0,
        admm_iterations: 0,
        admm_converged: true,
        weights: Vec::new(),
        curve: Vec::new(),
    };
    let scores: Vec<f64> = if variant.is_text_only() {
        let crf = inputs.crf.as_ref().expect("checked before running");
        test.targets
            .iter()
            .map(|a| {
                let pair = DrugDisease::new(&a.args[0].id, &a.args[1].id);
                crf.get(&pair).copied().unwrap_or(0.0)
            })
            .collect()
    } else {
        let rules = variant.rules(cfg.hinge == Hinge::Squared);
        let mut m = ground(&rules, &train.graph, &train.targets)?;
        let w0 = init_weights(&m, m.num_variables() as f64)?;
        m.set_weights(&w0);
        let report = learn_weights(&m, &train.gold(), &cfg.learn)?;
        let mut mt = ground(&rules, &test.graph, &test.targets)?;
        mt.set_weights(&report.learned());
        let (y, diag) = map_inference(&mt, &cfg.admm)?;
        outcome.ground_rules = mt.rules.len();
        outcome.admm_iterations = diag.iterations;
        outcome.admm_converged = diag.converged;
        outcome.weights = report.entries;
        y
    };
    outcome.auc = pr_auc(&scores, &labels)?;
    outcome.curve = pr_curve(&scores, &labels)?;
    if cfg.roc {
        outcome.roc = roc_auc(&scores, &labels).ok();
    }
    Ok(outcome)
}

fn run_cell(
    cfg: &ExperimentConfig,
    inputs: &ExperimentInputs,
    run: usize,
    ratio_idx: usize,
) -> Vec<RunRecord> {
    let ratio = cfg.evidence_ratios[ratio_idx];
    let run_seed = derive_seed(cfg.seed, &[run as u64]);
    let splits =
        sample_disjoint_subgraphs(&inputs.graph, derive_seed(run_seed, &[STREAM_SUBGRAPHS]))
            .and_then(|(tr, te)| {
                let split = |g: &KnowledgeGraph, stream: u64| {
                    split_evidence(
                        g,
                        ratio,
                        cfg.prediction_fraction,
                        cfg.leftover,
                        derive_seed(run_seed, &[stream, ratio_idx as u64]),
                    )
                };
                Ok((split(&tr, STREAM_TRAIN)?, split(&te, STREAM_TEST)?))
            });
    cfg.variants
        .iter()
        .map(|variant| {
            let base = RunRecord {
                run,
                variant: *variant,
                evidence_ratio: ratio,
                auc: None,
                roc_auc: None,
                error: None,
                targets: 0,
                positives: 0,
                ground_rules: 0,
                admm_iterations: 0,
                admm_converged: false,
                weights: Vec::new(),
                pr_curve: Vec::new(),
            };
            let result = splits
                .as_ref()
                .map_err(|e| EvalError::Config(e.to_string()))
                .and_then(|(train, test)| {
                    score(cfg, inputs, variant, train, test).map(|o| (o, test.targets.len()))
                });
            match result {
                Ok((o, targets)) => RunRecord {
                    auc: Some(o.auc),
                    roc_auc: o.roc,
                    targets,
                    positives: o.positives,
                    ground_rules: o.ground_rules,
                    admm_iterations: o.admm_iterations,
                    admm_converged: o.admm_converged,
                    weights: o.weights,
                    pr_curve: o.curve,
                    ..base
                },
                Err(e) => {
                    log::warn!(
                        "run {run}, {variant} at ratio {ratio}: {e}; excluded from the summary"
                    );
                    RunRecord {
                        error: Some(e.to_string()),
                        ..base
                    }
                }
            }
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn summarize(
    cfg: &ExperimentConfig,
    records: &[RunRecord],
) -> (Vec<SummaryRow>, Vec<WeightSummaryRow>) {
    let mut summary = Vec::new();
    let mut weights = Vec::new();
    for variant in &cfg.variants {
        for &ratio in &cfg.evidence_ratios {
            let cell: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.variant == *variant && r.evidence_ratio == ratio && r.auc.is_some())
                .collect();
            let aucs: Vec<f64> = cell.iter().filter_map(|r| r.auc).collect();
            let (mean_auc, std_auc) = if aucs.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_std(&aucs)
            };
            summary.push(SummaryRow {
                variant: *variant,
                evidence_ratio: ratio,
                mean_auc,
                std_auc,
                runs: aucs.len(),
            });
            let mut per_rule: BTreeMap<&str, (Vec<f64>, f64, usize)> = BTreeMap::new();
            let mut order: Vec<&str> = Vec::new();
            for r in &cell {
                for w in &r.weights {
                    let slot = per_rule.entry(&w.rule).or_insert_with(|| {
                        order.push(&w.rule);
                        (Vec::new(), 0.0, 0)
                    });
                    if let Some(rel) = w.relative {
                        slot.0.push(rel);
                    }
                    slot.1 += w.groundings as f64;
                    slot.2 += 1;
                }
            }
            for rule in order {
                let (rel, groundings, n) = &per_rule[rule];
                weights.push(WeightSummaryRow {
                    variant: *variant,
                    evidence_ratio: ratio,
                    rule: rule.to_string(),
                    mean_relative_weight: (!rel.is_empty())
                        .then(|| rel.iter().sum::<f64>() / rel.len() as f64),
                    mean_groundings: groundings / *n as f64,
                    runs: rel.len(),
                });
            }
        }
    }
    (summary, weights)
}

/// Runs every (run, evidence ratio, variant) cell. Cells are independent
/// and run on the current rayon pool; results come back in a fixed order.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    inputs: &ExperimentInputs,
) -> Result<ExperimentResults, EvalError> {
    cfg.check()?;
    for v in &cfg.variants {
        inputs.check_variant(v)?;
    }
    let cells: Vec<(usize, usize)> = (0..cfg.runs)
        .flat_map(|run| (0..cfg.evidence_ratios.len()).map(move |r| (run, r)))
        .collect();
    let records: Vec<RunRecord> = cells
        .par_iter()
        .map(|&(run, r)| run_cell(cfg, inputs, run, r))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let (summary, weights) = summarize(cfg, &records);
    Ok(ExperimentResults {
        records,
        summary,
        weights,
    })
}

impl ExperimentResults {
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["variant", "evidence_ratio", "mean_auc", "std_auc", "runs"])?;
        for row in &self.summary {
            out.write_record([
                row.variant.to_string(),
                row.evidence_ratio.to_string(),
                format!("{:.6}", row.mean_auc),
                format!("{:.6}", row.std_auc),
                row.runs.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_runs_jsonl<W: Write>(&self, mut w: W) -> Result<(), EvalError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(|e| EvalError::Config(e.to_string()))?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_pr_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "variant",
            "evidence_ratio",
            "run",
            "threshold",
            "precision",
            "recall",
        ])?;
        for r in &self.records {
            for p in &r.pr_curve {
                out.write_record([
                    r.variant.to_string(),
                    r.evidence_ratio.to_string(),
                    r.run.to_string(),
                    p.threshold.to_string(),
                    p.precision.to_string(),
                    p.recall.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_weights_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "variant",
            "evidence_ratio",
            "rule",
            "mean_relative_weight",
            "mean_groundings",
            "runs",
        ])?;
        for row in &self.weights {
            out.write_record([
                row.variant.to_string(),
                row.evidence_ratio.to_string(),
                row.rule.clone(),
                row.mean_relative_weight
                    .map_or("-".into(), |v| format!("{v:.6}")),
                format!("{:.3}", row.mean_groundings),
                row.runs.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_row(&self, variant: &str, ratio: f64) -> Option<&SummaryRow> {
        let v: Variant = variant.parse().ok()?;
        self.summary
            .iter()
            .find(|r| r.variant == v && (r.evidence_ratio - ratio).abs() < 1e-12)
    }
}
