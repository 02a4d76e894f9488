mod cli;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cli::{AggregateArgs, ExperimentArgs, Failure, Globals, InferArgs, LearnArgs, ModelArgs};
use kgpsl::annotate::EmConfig;
use kgpsl::eval::synthetic::SyntheticConfig;
use kgpsl::eval::{Hinge, Leftover, Variant};
use kgpsl::infer::AdmmConfig;
use kgpsl::kg::DrugFilter;
use kgpsl::learn::LearnConfig;

/// Soft-logic link prediction over drug/disease knowledge graphs.
#[derive(Debug, Parser)]
#[command(name = "kgpsl", version)]
struct Cli {
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// One worker thread and sequential reductions.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true, value_name = "linear|squared")]
    hinge: Option<Hinge>,
    /// Fate of labeled edges that are neither observed nor predicted.
    #[arg(long, global = true, value_name = "remove|negative")]
    leftover: Option<Leftover>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aggregate crowd labels with Dawid-Skene EM.
    Aggregate {
        /// `worker_id,item_id,label` CSV.
        responses: PathBuf,
        /// Aggregation result JSON.
        #[arg(long)]
        out: PathBuf,
        /// Per-class agreement TSV (default: stdout).
        #[arg(long)]
        agreement: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
    },
    /// Link narratives to the drugs and diseases they mention.
    BuildNarratives {
        /// `id<TAB>text` rows.
        texts: PathBuf,
        /// `phrase<TAB>kind<TAB>id` rows.
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop drugs from a graph by degree or by id.
    FilterDrugs {
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop drugs labeled against more than this many diseases.
        #[arg(long, conflicts_with = "drugs", required_unless_present = "drugs")]
        max_degree: Option<usize>,
        /// Comma-separated drug ids to drop.
        #[arg(long, value_delimiter = ',')]
        drugs: Vec<String>,
    },
    /// Ground rules and dump the ground potentials.
    Ground {
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MAP inference; writes `drug,disease,score`.
    Infer {
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Inference diagnostics JSON.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Exit with status 3 if ADMM does not converge.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        abs_tol: Option<f64>,
        #[arg(long)]
        rel_tol: Option<f64>,
    },
    /// Learn rule weights from the targets' gold values.
    Learn {
        #[command(flatten)]
        model: ModelOpts,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Start from the rule file weights instead of source-balanced ones.
        #[arg(long)]
        keep_weights: bool,
        /// Total initial weight mass (default: number of targets).
        #[arg(long)]
        mass: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        step: Option<f64>,
    },
    /// Run the evaluation protocol from a TOML file or a run manifest.
    Experiment {
        /// `experiment.toml` or a `manifest.json` from an earlier run.
        config: PathBuf,
        /// Output directory (overrides the file's).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Write a planted synthetic graph and a matching experiment file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "text_only,ontologies,narratives,graph,ontologies+crf,narratives+crf,full"
        )]
        variants: Vec<Variant>,
    },
}

#[derive(Debug, Args)]
struct ModelOpts {
    /// Graph TSV files, merged.
    #[arg(long = "graph", required = true)]
    graphs: Vec<PathBuf>,
    /// CRF predictions `drug_id,disease_id,score`.
    #[arg(long)]
    crf: Option<PathBuf>,
    /// Rule file; defaults to the built-in rules for the graphs given.
    #[arg(long, conflicts_with = "variant")]
    rules: Option<PathBuf>,
    /// Built-in rule set, e.g. `full` or `ontologies+crf`.
    #[arg(long)]
    variant: Option<Variant>,
    /// `drug<TAB>disease[<TAB>gold]` rows.
    #[arg(long)]
    targets: PathBuf,
    /// Weight report TSV from `learn`.
    #[arg(long)]
    weights: Option<PathBuf>,
}

impl From<ModelOpts> for ModelArgs {
    fn from(o: ModelOpts) -> Self {
        ModelArgs {
            graphs: o.graphs,
            crf: o.crf,
            rules: o.rules,
            variant: o.variant,
            targets: o.targets,
            weights: o.weights,
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let jobs = if cli.deterministic { Some(1) } else { cli.jobs };
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::invalid(e.to_string()))?;
    }
    let globals = Globals {
        seed: cli.seed,
        deterministic: cli.deterministic,
        hinge: cli.hinge,
        leftover: cli.leftover,
    };
    match cli.command {
        Command::Aggregate {
            responses,
            out,
            agreement,
            max_iters,
            tol,
            epsilon,
        } => cli::aggregate(&AggregateArgs {
            responses,
            out,
            agreement,
            em: EmConfig {
                max_iters,
                tol,
                epsilon,
            },
        }),
        Command::BuildNarratives {
            texts,
            lexicon,
            out,
        } => cli::build_narratives(&texts, &lexicon, &out),
        Command::FilterDrugs {
            graph,
            out,
            max_degree,
            drugs,
        } => {
            let filter = match max_degree {
                Some(d) => DrugFilter::MaxDegree(d),
                None => DrugFilter::Explicit(drugs),
            };
            cli::filter_drugs(&graph, &out, &filter)
        }
        Command::Ground { model, out } => cli::ground_cmd(&model.into(), &globals, out.as_deref()),
        Command::Infer {
            model,
            out,
            diagnostics,
            strict,
            rho,
            max_iters,
            abs_tol,
            rel_tol,
        } => {
            let d = AdmmConfig::default();
            let admm = AdmmConfig {
                rho: rho.unwrap_or(d.rho),
                max_iters: max_iters.unwrap_or(d.max_iters),
                abs_tol: abs_tol.unwrap_or(d.abs_tol),
                rel_tol: rel_tol.unwrap_or(d.rel_tol),
                parallel: true,
                ..d
            };
            let args = InferArgs {
                out,
                diagnostics,
                strict,
                admm,
            };
            cli::infer_cmd(&model.into(), &args, &globals)
        }
        Command::Learn {
            model,
            out,
            keep_weights,
            mass,
            iterations,
            step,
        } => {
            let d = LearnConfig::default();
            let learn = LearnConfig {
                iterations: iterations.unwrap_or(d.iterations),
                step: step.unwrap_or(d.step),
                parallel: true,
                ..d
            };
            let args = LearnArgs {
                out,
                keep_weights,
                mass,
                learn,
            };
            cli::learn_cmd(&model.into(), &args, &globals)
        }
        Command::Experiment { config, out, runs } => {
            cli::experiment_cmd(&ExperimentArgs { config, out, runs }, &globals)
        }
        Command::Synth {
            out,
            runs,
            variants,
        } => {
            let cfg = SyntheticConfig {
                seed: cli.seed.unwrap_or(SyntheticConfig::default().seed),
                ..Default::default()
            };
            cli::synth_cmd(&out, &cfg, runs, &variants)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
