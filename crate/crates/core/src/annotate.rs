//! Crowd-label aggregation with the Dawid–Skene model.
//!
//! Each worker has a confusion matrix `C[w][true][reported]`; item posteriors
//! over the true relation are re-estimated by EM. Confusion rows and class
//! priors get additive smoothing `epsilon`, which makes every M-step a MAP
//! update under a symmetric Dirichlet(1 + epsilon) prior. The quantity that
//! EM ascends is therefore the penalized log-likelihood reported in
//! [`AggregationResult::objective_trace`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_CLASSES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    Prevents,
    Treats,
    TreatsOutcomes,
    NotEstablished,
    NotRecommended,
    Other,
}

impl Relation {
    /// Fixed class order; argmax ties resolve to the earliest entry.
    pub const ALL: [Relation; NUM_CLASSES] = [
        Relation::Prevents,
        Relation::Treats,
        Relation::TreatsOutcomes,
        Relation::NotEstablished,
        Relation::NotRecommended,
        Relation::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Prevents => "Prevents",
            Relation::Treats => "Treats",
            Relation::TreatsOutcomes => "Treats Outcomes",
            Relation::NotEstablished => "Not Established",
            Relation::NotRecommended => "Not Recommended",
            Relation::Other => "Other",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Relation {
    type Err = AnnotateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Ok(match key.as_str() {
            "prevents" => Relation::Prevents,
            "treats" => Relation::Treats,
            "treatsoutcomes" => Relation::TreatsOutcomes,
            "notestablished" => Relation::NotEstablished,
            "notrecommended" => Relation::NotRecommended,
            "other" => Relation::Other,
            _ => return Err(AnnotateError::UnknownLabel(s.to_string())),
        })
    }
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("no worker responses")]
    Empty,
    #[error("unknown relation label `{0}`")]
    UnknownLabel(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerResponse {
    pub worker_id: String,
    pub item_id: String,
    pub label: Relation,
}

impl WorkerResponse {
    pub fn new(worker_id: &str, item_id: &str, label: Relation) -> Self {
        WorkerResponse {
            worker_id: worker_id.to_string(),
            item_id: item_id.to_string(),
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub epsilon: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 100,
            tol: 1e-6,
            epsilon: 0.01,
        }
    }
}

pub type Distribution = [f64; NUM_CLASSES];
pub type Confusion = [[f64; NUM_CLASSES]; NUM_CLASSES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationResult {
    pub posteriors: BTreeMap<String, Distribution>,
    pub labels: BTreeMap<String, Relation>,
    /// Row `k` is the distribution of what the worker reports when the true
    /// relation is `k`.
    pub confusion: BTreeMap<String, Confusion>,
    pub priors: Distribution,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized observed-data log-likelihood after each M-step.
    pub objective_trace: Vec<f64>,
}

/// Reads `worker_id,item_id,label` rows; a leading header row is skipped.
pub fn read_responses<R: Read>(reader: R) -> Result<Vec<WorkerResponse>, AnnotateError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = (idx + 1) as u64;
        let record = record.map_err(|e| AnnotateError::Parse {
            line: e.position().map_or(line, |p| p.line()),
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != 3 {
            return Err(AnnotateError::Parse {
                line,
                message: format!("expected 3 fields, got {}", record.len()),
            });
        }
        if idx == 0 && record[0].eq_ignore_ascii_case("worker_id") {
            continue;
        }
        let label = record[2]
            .parse()
            .map_err(|e: AnnotateError| AnnotateError::Parse {
                line,
                message: e.to_string(),
            })?;
        out.push(WorkerResponse::new(&record[0], &record[1], label));
    }
    Ok(out)
}

pub fn load_responses(path: impl AsRef<Path>) -> Result<Vec<WorkerResponse>, AnnotateError> {
    read_responses(std::fs::File::open(path)?)
}

/// Per-item response counts, indexed by sorted item and worker ids.
struct Tally {
    items: Vec<String>,
    workers: Vec<String>,
    /// For each item: (worker index, reported class, count).
    counts: Vec<Vec<(usize, usize, f64)>>,
}

impl Tally {
    fn new(responses: &[WorkerResponse]) -> Self {
        let mut grouped: BTreeMap<(&str, &str, usize), usize> = BTreeMap::new();
        for r in responses {
            *grouped
                .entry((r.item_id.as_str(), r.worker_id.as_str(), r.label.index()))
                .or_default() += 1;
        }
        let mut items: Vec<String> = responses.iter().map(|r| r.item_id.clone()).collect();
        items.sort();
        items.dedup();
        let mut workers: Vec<String> = responses.iter().map(|r| r.worker_id.clone()).collect();
        workers.sort();
        workers.dedup();
        let item_idx: BTreeMap<&str, usize> = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let worker_idx: BTreeMap<&str, usize> = workers
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut counts = vec![Vec::new(); items.len()];
        for ((item, worker, label), n) in grouped {
            counts[item_idx[item]].push((worker_idx[worker], label, n as f64));
        }
        Tally {
            items,
            workers,
            counts,
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn argmax(dist: &Distribution) -> Relation {
    let max = dist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = dist.iter().position(|p| *p >= max - 1e-12).unwrap_or(0);
    Relation::ALL[k]
}

fn m_step(tally: &Tally, post: &[Distribution], eps: f64) -> (Distribution, Vec<Confusion>) {
    let k = NUM_CLASSES as f64;
    let mut priors = [0.0; NUM_CLASSES];
    let mut conf = vec![[[0.0; NUM_CLASSES]; NUM_CLASSES]; tally.workers.len()];
    for (i, t) in post.iter().enumerate() {
        for c in 0..NUM_CLASSES {
            priors[c] += t[c];
        }
        for &(w, l, n) in &tally.counts[i] {
            for c in 0..NUM_CLASSES {
                conf[w][c][l] += t[c] * n;
            }
        }
    }
    let total = post.len() as f64;
    for p in priors.iter_mut() {
        *p = (*p + eps) / (total + k * eps);
    }
    for m in conf.iter_mut() {
        for row in m.iter_mut() {
            let s: f64 = row.iter().sum();
            for x in row.iter_mut() {
                *x = (*x + eps) / (s + k * eps);
            }
        }
    }
    (priors, conf)
}

/// E-step; returns new posteriors and the penalized log-likelihood of the
/// current parameters.
fn e_step(
    tally: &Tally,
    priors: &Distribution,
    conf: &[Confusion],
    eps: f64,
) -> (Vec<Distribution>, f64) {
    let log_priors: Vec<f64> = priors.iter().map(|p| p.ln()).collect();
    let mut loglik = 0.0;
    let mut post = Vec::with_capacity(tally.items.len());
    for counts in &tally.counts {
        let mut logp = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            logp[c] = log_priors[c]
                + counts
                    .iter()
                    .map(|&(w, l, n)| n * conf[w][c][l].ln())
                    .sum::<f64>();
        }
        let z = log_sum_exp(&logp);
        loglik += z;
        let mut t = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            t[c] = (logp[c] - z).exp();
        }
        post.push(t);
    }
    let log_prior_penalty = eps
        * (log_priors.iter().sum::<f64>()
            + conf
                .iter()
                .flat_map(|m| m.iter().flatten())
                .map(|x| x.ln())
                .sum::<f64>());
    (post, loglik + log_prior_penalty)
}

/// Dawid–Skene EM, initialized from per-item vote fractions.
pub fn aggregate_labels(
    responses: &[WorkerResponse],
    cfg: &EmConfig,
) -> Result<AggregationResult, AnnotateError> {
    if responses.is_empty() {
        return Err(AnnotateError::Empty);
    }
    let tally = Tally::new(responses);
    let mut post: Vec<Distribution> = tally
        .counts
        .iter()
        .map(|counts| {
            let mut t = [0.0; NUM_CLASSES];
            for &(_, l, n) in counts {
                t[l] += n;
            }
            let s: f64 = t.iter().sum();
            t.map(|x| x / s)
        })
        .collect();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let (mut priors, mut conf) = m_step(&tally, &post, cfg.epsilon);
    while iterations < cfg.max_iters {
        iterations += 1;
        let (next, objective) = e_step(&tally, &priors, &conf, cfg.epsilon);
        trace.push(objective);
        let delta = post
            .iter()
            .zip(&next)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        post = next;
        (priors, conf) = m_step(&tally, &post, cfg.epsilon);
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(AggregationResult {
        labels: tally
            .items
            .iter()
            .zip(&post)
            .map(|(id, t)| (id.clone(), argmax(t)))
            .collect(),
        posteriors: tally.items.iter().cloned().zip(post).collect(),
        confusion: tally.workers.iter().cloned().zip(conf).collect(),
        priors,
        iterations,
        converged,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAgreement {
    pub relation: Relation,
    pub count: usize,
    /// Mean percentage of an item's responses equal to its inferred label;
    /// `None` for classes no item was assigned to.
    pub agreement: Option<f64>,
}

/// Per-class relation counts and mean raw (unweighted) worker agreement with
/// the inferred label.
pub fn agreement_stats(
    responses: &[WorkerResponse],
    result: &AggregationResult,
) -> Vec<ClassAgreement> {
    let mut per_item: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in responses {
        let Some(inferred) = result.labels.get(&r.item_id) else {
            continue;
        };
        let e = per_item.entry(r.item_id.as_str()).or_default();
        e.1 += 1;
        if r.label == *inferred {
            e.0 += 1;
        }
    }
    let mut sums = [(0usize, 0.0f64); NUM_CLASSES];
    for (item, (agree, total)) in per_item {
        let c = result.labels[item].index();
        sums[c].0 += 1;
        sums[c].1 += agree as f64 / total as f64;
    }
    Relation::ALL
        .iter()
        .map(|&relation| {
            let (count, sum) = sums[relation.index()];
            ClassAgreement {
                relation,
                count,
                agreement: (count > 0).then(|| 100.0 * sum / count as f64),
            }
        })
        .collect()
}
