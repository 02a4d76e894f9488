//! Experiment files, CRF prediction files and run manifests.
//!
//! An experiment file is TOML. Top-level keys are the experiment settings;
//! `[inputs]` names the input files (relative to the file's directory),
//! `[output]` the result directory, `[admm]` and `[learn]` the solver knobs.
//!
//! ```toml
//! seed = 7
//! runs = 100
//! evidence_ratios = [0.0, 0.25, 0.5, 0.75]
//! variants = ["text_only", "graph", "full"]
//!
//! [inputs]
//! ontologies = "ontologies.tsv"
//! narratives = "narratives.tsv"
//! labels = "labels.tsv"
//! crf = "crf.csv"
//!
//! [output]
//! dir = "results"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{EvalError, ExperimentConfig, ExperimentInputs};
use crate::kg::{load_graph, DrugDisease, GraphError, KnowledgeGraph};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Toml {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: line {line}: {message}")]
    Crf {
        path: String,
        line: u64,
        message: String,
    },
    #[error("input `{name}` changed since the manifest was written ({path})")]
    DigestMismatch { name: String, path: String },
    #[error("{path}: {source}")]
    Graph {
        path: String,
        #[source]
        source: GraphError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ConfigError + '_ {
    move |source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub ontologies: Option<PathBuf>,
    pub narratives: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub crf: Option<PathBuf>,
}

impl InputPaths {
    fn named(&self) -> Vec<(&'static str, &Path)> {
        [
            ("ontologies", &self.ontologies),
            ("narratives", &self.narratives),
            ("labels", &self.labels),
            ("crf", &self.crf),
        ]
        .into_iter()
        .filter_map(|(n, p)| p.as_deref().map(|p| (n, p)))
        .collect()
    }

    fn resolve(mut self, base: &Path) -> Self {
        for p in [
            &mut self.ontologies,
            &mut self.narratives,
            &mut self.labels,
            &mut self.crf,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        self
    }

    pub fn load(&self) -> Result<ExperimentInputs, ConfigError> {
        let graph = |p: &Option<PathBuf>| -> Result<Option<KnowledgeGraph>, ConfigError> {
            p.as_deref()
                .map(|p| {
                    load_graph(p).map_err(|source| ConfigError::Graph {
                        path: p.display().to_string(),
                        source,
                    })
                })
                .transpose()
        };
        let ontologies = graph(&self.ontologies)?;
        let narratives = graph(&self.narratives)?;
        let labels = graph(&self.labels)?;
        let crf = self.crf.as_deref().map(load_crf).transpose()?;
        Ok(ExperimentInputs::new(
            ontologies.as_ref(),
            narratives.as_ref(),
            labels.as_ref(),
            crf.as_deref(),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentFile {
    pub config: ExperimentConfig,
    /// Resolved against the experiment file's directory.
    pub inputs: InputPaths,
    pub output_dir: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
}

/// Parses an experiment file. Relative paths are resolved against `base`.
pub fn parse_experiment_toml(text: &str, base: &Path) -> Result<ExperimentFile, toml::de::Error> {
    let mut table: toml::Table = text.parse()?;
    let inputs: InputPaths = match table.remove("inputs") {
        Some(v) => v.try_into()?,
        None => InputPaths::default(),
    };
    let output: OutputSection = match table.remove("output") {
        Some(v) => v.try_into()?,
        None => OutputSection::default(),
    };
    let config: ExperimentConfig = toml::Value::Table(table).try_into()?;
    let dir = output.dir.unwrap_or_else(|| PathBuf::from("results"));
    Ok(ExperimentFile {
        config,
        inputs: inputs.resolve(base),
        output_dir: if dir.is_relative() {
            base.join(dir)
        } else {
            dir
        },
    })
}

pub fn load_experiment_file(path: &Path) -> Result<ExperimentFile, ConfigError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_experiment_toml(&text, base).map_err(|source| ConfigError::Toml {
        path: path.display().to_string(),
        source,
    })
}

/// Reads `drug_id,disease_id,score` rows; a header row is optional.
pub fn read_crf<R: Read>(reader: R, path: &str) -> Result<Vec<(DrugDisease, f64)>, ConfigError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx as u64 + 1;
        let fail = |message: String| ConfigError::Crf {
            path: path.to_string(),
            line,
            message,
        };
        let record = record.map_err(|e| fail(e.to_string()))?;
        if idx == 0 && record.get(0) == Some("drug_id") {
            continue;
        }
        if record.len() != 3 {
            return Err(fail(format!("expected 3 fields, got {}", record.len())));
        }
        let score: f64 = record[2]
            .parse()
            .map_err(|_| fail(format!("bad score `{}`", &record[2])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(fail(format!("score {score} outside [0, 1]")));
        }
        if record[0].is_empty() || record[1].is_empty() {
            return Err(fail("empty id".into()));
        }
        out.push((DrugDisease::new(&record[0], &record[1]), score));
    }
    Ok(out)
}

pub fn load_crf(path: &Path) -> Result<Vec<(DrugDisease, f64)>, ConfigError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_crf(file, &path.display().to_string())
}

pub fn sha256_file(path: &Path) -> Result<String, ConfigError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything needed to repeat an experiment: the resolved configuration
/// and the digests of the inputs it read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_path: PathBuf,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub inputs: InputPaths,
    pub output_dir: PathBuf,
    /// Input name to hex SHA-256.
    pub digests: BTreeMap<String, String>,
}

impl RunManifest {
    /// Paths are made absolute so the manifest works from any directory.
    pub fn new(config_path: &Path, file: &ExperimentFile) -> Result<Self, ConfigError> {
        let absolute = |p: &Path| std::path::absolute(p).map_err(io_err(p));
        let mut inputs = file.inputs.clone();
        for p in [
            &mut inputs.ontologies,
            &mut inputs.narratives,
            &mut inputs.labels,
            &mut inputs.crf,
        ]
        .into_iter()
        .flatten()
        {
            *p = absolute(p)?;
        }
        let mut digests = BTreeMap::new();
        for (name, p) in inputs.named() {
            digests.insert(name.to_string(), sha256_file(p)?);
        }
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: absolute(config_path)?,
            seed: file.config.seed,
            config: file.config.clone(),
            inputs,
            output_dir: absolute(&file.output_dir)?,
            digests,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    /// Fails if any recorded input is missing, unrecorded or changed.
    pub fn verify(&self) -> Result<(), ConfigError> {
        let named = self.inputs.named();
        if named.len() != self.digests.len() {
            return Err(ConfigError::Invalid(
                "manifest digests do not match its inputs".into(),
            ));
        }
        for (name, p) in named {
            let expected = self.digests.get(name).ok_or_else(|| {
                ConfigError::Invalid(format!("manifest has no digest for `{name}`"))
            })?;
            if sha256_file(p)? != *expected {
                return Err(ConfigError::DigestMismatch {
                    name: name.to_string(),
                    path: p.display().to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentFile {
        ExperimentFile {
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            output_dir: self.output_dir.clone(),
        }
    }
}
