//! Evaluation protocol: disjoint subgraph sampling, evidence splits,
//! precision-recall scoring and multi-run experiments.

mod experiment;
mod metrics;
mod split;
pub mod synthetic;

use thiserror::Error;

pub use experiment::{
    derive_seed, run_experiment, ExperimentConfig, ExperimentInputs, ExperimentResults, Hinge,
    RunRecord, SummaryRow, Variant, WeightSummaryRow,
};
pub use metrics::{pr_auc, pr_curve, roc_auc, PrPoint};
pub use split::{
    labeled_edges, sample_disjoint_subgraphs, split_evidence, EvidenceSplit, Leftover,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no positive labels")]
    NoPositives,
    #[error("{0}")]
    Metric(String),
    #[error("graph too small: {0}")]
    TooSmall(String),
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error(transparent)]
    Graph(#[from] crate::kg::GraphError),
    #[error(transparent)]
    Ground(#[from] crate::ground::GroundError),
    #[error(transparent)]
    Infer(#[from] crate::infer::InferError),
    #[error(transparent)]
    Learn(#[from] crate::learn::LearnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
