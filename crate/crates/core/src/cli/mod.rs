//! Subcommand implementations. Each returns `Ok(())` or a [`Failure`]
//! carrying the exit code.

pub mod failure;

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};

use kgpsl::annotate::{aggregate_labels, agreement_stats, load_responses, EmConfig};
use kgpsl::config::{load_crf, load_experiment_file, ExperimentFile, RunManifest};
use kgpsl::eval::synthetic::{planted_graph, SyntheticConfig};
use kgpsl::eval::{run_experiment, Hinge, Leftover, Variant};
use kgpsl::ground::{ground, grounding_counts, write_grounding_dump, GroundedModel};
use kgpsl::infer::{map_inference, AdmmConfig};
use kgpsl::kg::{
    build_narratives_graph, filter_high_degree_drugs, load_graph, read_narratives, save_graph,
    Atom, DrugFilter, EntityKind, KnowledgeGraph, Lexicon, CRF_TREATS, DISEASE_RELATIONS,
    DRUG_RELATIONS, IS_MENTIONED_IN,
};
use kgpsl::learn::{init_weights, learn_weights, read_weights_tsv, LearnConfig};
use kgpsl::rules::{parse_rules, RuleSet};

pub use failure::Failure;
use failure::{EMPTY, NUMERICAL};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub hinge: Option<Hinge>,
    pub leftover: Option<Leftover>,
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::from(e).context(dir.display()))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::from(e).context(path.display()))
}

/// A file, or stdout when no path is given.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

// ---- aggregate ----

pub struct AggregateArgs {
    pub responses: PathBuf,
    pub out: PathBuf,
    pub agreement: Option<PathBuf>,
    pub em: EmConfig,
}

pub fn aggregate(a: &AggregateArgs) -> Result<(), Failure> {
    let responses = load_responses(&a.responses)
        .map_err(|e| Failure::from(e).context(a.responses.display()))?;
    let result = aggregate_labels(&responses, &a.em)?;
    if !result.converged {
        warn!(
            "EM stopped after {} iterations without converging",
            result.iterations
        );
    }
    let mut w = create(&a.out)?;
    serde_json::to_writer_pretty(&mut w, &result)?;
    writeln!(w)?;
    w.flush()?;
    let stats = agreement_stats(&responses, &result);
    let mut w = output(a.agreement.as_deref())?;
    writeln!(w, "relation\tcount\tagreement")?;
    for s in stats {
        let agreement = s.agreement.map_or("-".to_string(), |v| format!("{v:.1}"));
        writeln!(w, "{}\t{}\t{}", s.relation, s.count, agreement)?;
    }
    w.flush()?;
    Ok(())
}

// ---- build-narratives ----

pub fn build_narratives(texts: &Path, lexicon: &Path, out: &Path) -> Result<(), Failure> {
    let rows = read_narratives(texts).map_err(|e| Failure::from(e).context(texts.display()))?;
    if rows.is_empty() {
        return Err(Failure::new(
            EMPTY,
            format!("{}: no narratives", texts.display()),
        ));
    }
    let lex = Lexicon::load(lexicon).map_err(|e| Failure::from(e).context(lexicon.display()))?;
    let (g, report) = build_narratives_graph(
        &rows,
        &lex.of_kind(EntityKind::Drug),
        &lex.of_kind(EntityKind::Disease),
    )?;
    info!(
        "{} texts, {} with mentions, {} mention atoms",
        report.texts, report.matched, report.mentions
    );
    if report.matched == 0 {
        return Err(Failure::new(EMPTY, "no narrative mentions a lexicon entry"));
    }
    save_graph(&g, out).map_err(|e| Failure::from(e).context(out.display()))?;
    Ok(())
}

// ---- filter-drugs ----

pub fn filter_drugs(graph: &Path, out: &Path, filter: &DrugFilter) -> Result<(), Failure> {
    let g = load_graph(graph).map_err(|e| Failure::from(e).context(graph.display()))?;
    let (kept, report) = filter_high_degree_drugs(&g, filter);
    for id in &report.missing {
        warn!("`{id}` is not a drug in {}", graph.display());
    }
    for (id, degree) in &report.removed {
        info!("removed {id} (degree {degree})");
    }
    eprintln!(
        "removed {} drug(s), {} atom(s)",
        report.removed.len(),
        report.atoms_removed
    );
    save_graph(&kept, out).map_err(|e| Failure::from(e).context(out.display()))?;
    Ok(())
}

// ---- ground / infer / learn ----

pub struct ModelArgs {
    pub graphs: Vec<PathBuf>,
    pub crf: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub targets: PathBuf,
    pub weights: Option<PathBuf>,
}

/// Reads `drug<TAB>disease[<TAB>gold]` rows; gold may be `?`.
pub fn read_targets(path: &Path) -> Result<Vec<(Atom, Option<f64>)>, Failure> {
    let file = File::open(path).map_err(|e| Failure::from(e).context(path.display()))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let at = |m: String| Failure::invalid(format!("{}: line {}: {m}", path.display(), idx + 1));
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if idx == 0 && fields.first() == Some(&"drug") {
            continue;
        }
        let gold = match fields.as_slice() {
            [_, _] | [_, _, "?"] => None,
            [_, _, v] => {
                let v: f64 = v.parse().map_err(|_| at(format!("bad gold value `{v}`")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(at(format!("gold value {v} outside [0, 1]")));
                }
                Some(v)
            }
            _ => return Err(at(format!("expected 2 or 3 fields, got {}", fields.len()))),
        };
        let atom = Atom::treats(fields[0], fields[1]).map_err(|e| at(e.to_string()))?;
        out.push((atom, gold));
    }
    Ok(out)
}

/// The variant whose rules the graph can ground.
fn detect_variant(g: &KnowledgeGraph) -> Variant {
    let preds: BTreeSet<&str> = g.observed().keys().map(|a| a.predicate.as_str()).collect();
    let ontology = DRUG_RELATIONS
        .iter()
        .chain(&DISEASE_RELATIONS)
        .any(|r| preds.contains(r));
    Variant {
        crf: preds.contains(CRF_TREATS),
        ontologies: ontology,
        narratives: preds.contains(IS_MENTIONED_IN),
    }
}

fn load_model(a: &ModelArgs, globals: &Globals) -> Result<GroundedModel, Failure> {
    let mut g = KnowledgeGraph::new();
    for p in &a.graphs {
        let part = load_graph(p).map_err(|e| Failure::from(e).context(p.display()))?;
        g = g.merge(&part)?;
    }
    if let Some(p) = &a.crf {
        for (pair, v) in load_crf(p)? {
            g.add_atom(Atom::new(CRF_TREATS, pair.treats_atom().args), v)?;
        }
    }
    let targets = read_targets(&a.targets)?;
    for (atom, gold) in &targets {
        g.add_target(atom.clone(), *gold)
            .map_err(|e| Failure::from(e).context(a.targets.display()))?;
    }
    let mut rules: RuleSet = match (&a.rules, a.variant) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::from(e).context(p.display()))?;
            parse_rules(&text).map_err(|e| Failure::from(e).context(p.display()))?
        }
        (None, Some(v)) => v.rules(true),
        (None, None) => {
            let v = detect_variant(&g);
            info!("using the default `{v}` rules");
            v.rules(true)
        }
    };
    if let Some(h) = globals.hinge {
        rules = rules.with_hinge(h == Hinge::Squared);
    }
    let atoms: Vec<Atom> = targets.into_iter().map(|t| t.0).collect();
    let mut m = ground(&rules, &g, &atoms)?;
    if let Some(p) = &a.weights {
        let file = File::open(p).map_err(|e| Failure::from(e).context(p.display()))?;
        let table = read_weights_tsv(BufReader::new(file))
            .map_err(|e| Failure::from(e).context(p.display()))?;
        let mut w = m.weights();
        for (s, info) in m.schemas.iter().enumerate() {
            if let Some(v) = table.get(&info.id) {
                w[s] = *v;
            }
        }
        for id in table
            .keys()
            .filter(|id| !m.schemas.iter().any(|s| &s.id == *id))
        {
            warn!("weight for unknown rule `{id}` ignored");
        }
        m.set_weights(&w);
    }
    info!(
        "{} ground rules over {} variables",
        m.rules.len(),
        m.num_variables()
    );
    Ok(m)
}

pub fn ground_cmd(a: &ModelArgs, globals: &Globals, out: Option<&Path>) -> Result<(), Failure> {
    let m = load_model(a, globals)?;
    let mut w = output(out)?;
    write_grounding_dump(&m, &mut w)?;
    w.flush()?;
    for (id, n) in grounding_counts(&m) {
        info!("{id}: {n}");
    }
    Ok(())
}

pub struct InferArgs {
    pub out: Option<PathBuf>,
    pub diagnostics: Option<PathBuf>,
    pub strict: bool,
    pub admm: AdmmConfig,
}

pub fn infer_cmd(a: &ModelArgs, i: &InferArgs, globals: &Globals) -> Result<(), Failure> {
    let m = load_model(a, globals)?;
    let mut cfg = i.admm;
    cfg.parallel &= !globals.deterministic;
    let (y, diag) = map_inference(&m, &cfg)?;
    if let Some(p) = &i.diagnostics {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &diag)?;
        writeln!(w)?;
        w.flush()?;
    }
    if !diag.converged {
        let msg = format!(
            "ADMM did not converge in {} iterations (primal {:.3e}, dual {:.3e})",
            diag.iterations, diag.primal_residual, diag.dual_residual
        );
        if i.strict {
            return Err(Failure::new(NUMERICAL, msg));
        }
        warn!("{msg}");
    }
    let mut w = csv::Writer::from_writer(output(i.out.as_deref())?);
    w.write_record(["drug", "disease", "score"])?;
    for (atom, v) in m.variables.iter().zip(&y) {
        w.write_record([&atom.args[0].id, &atom.args[1].id, &format!("{v:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

pub struct LearnArgs {
    pub out: Option<PathBuf>,
    /// Start from the rule file's weights instead of the balanced ones.
    pub keep_weights: bool,
    pub mass: Option<f64>,
    pub learn: LearnConfig,
}

pub fn learn_cmd(a: &ModelArgs, l: &LearnArgs, globals: &Globals) -> Result<(), Failure> {
    let mut m = load_model(a, globals)?;
    if !l.keep_weights {
        let mass = l.mass.unwrap_or(m.num_variables() as f64);
        let w = init_weights(&m, mass)?;
        m.set_weights(&w);
    }
    let y = kgpsl::learn::gold_assignment(&m)?;
    let mut cfg = l.learn;
    cfg.parallel &= !globals.deterministic;
    let report = learn_weights(&m, &y, &cfg)?;
    let mut w = output(l.out.as_deref())?;
    report.write_tsv(&mut w)?;
    w.flush()?;
    Ok(())
}

// ---- experiment ----

pub struct ExperimentArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub runs: Option<usize>,
}

pub fn experiment_cmd(a: &ExperimentArgs, globals: &Globals) -> Result<(), Failure> {
    let is_manifest = a.config.extension().is_some_and(|e| e == "json");
    let (config_path, mut file): (PathBuf, ExperimentFile) = if is_manifest {
        let manifest = RunManifest::load(&a.config)?;
        manifest.verify()?;
        (manifest.config_path.clone(), manifest.experiment())
    } else {
        (a.config.clone(), load_experiment_file(&a.config)?)
    };
    if let Some(seed) = globals.seed {
        file.config.seed = seed;
    }
    if let Some(h) = globals.hinge {
        file.config.hinge = h;
    }
    if let Some(l) = globals.leftover {
        file.config.leftover = l;
    }
    if let Some(r) = a.runs {
        file.config.runs = r;
    }
    if globals.deterministic {
        file.config.admm.parallel = false;
        file.config.learn.parallel = false;
    }
    if let Some(out) = &a.out {
        file.output_dir = out.clone();
    }
    file.config.check()?;
    let manifest = RunManifest::new(&config_path, &file)?;
    let inputs = file.inputs.load()?;
    let results = run_experiment(&file.config, &inputs)?;
    let failed = results.records.iter().filter(|r| r.error.is_some()).count();
    if failed == results.records.len() {
        return Err(Failure::new(EMPTY, "every run failed"));
    }

    let dir = &file.output_dir;
    let mut w = create(&dir.join("summary.csv"))?;
    results.write_summary_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("runs.jsonl"))?;
    results.write_runs_jsonl(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("pr_curves.csv"))?;
    results.write_pr_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("weights.csv"))?;
    results.write_weights_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("manifest.json"))?;
    w.write_all(manifest.to_json().as_bytes())?;
    w.flush()?;

    for row in &results.summary {
        eprintln!(
            "{:<16} ratio {:.2}  AUC {:.4} ± {:.4}  ({} runs)",
            row.variant.to_string(),
            row.evidence_ratio,
            row.mean_auc,
            row.std_auc,
            row.runs
        );
    }
    if failed > 0 {
        warn!("{failed} run(s) failed and were excluded");
    }
    Ok(())
}

// ---- synth ----

pub fn synth_cmd(
    out: &Path,
    cfg: &SyntheticConfig,
    runs: usize,
    variants: &[Variant],
) -> Result<(), Failure> {
    let data = planted_graph(cfg);
    fs::create_dir_all(out).map_err(|e| Failure::from(e).context(out.display()))?;
    for (name, g) in [
        ("ontologies.tsv", &data.ontologies),
        ("narratives.tsv", &data.narratives),
        ("labels.tsv", &data.labels),
    ] {
        let p = out.join(name);
        save_graph(g, &p).map_err(|e| Failure::from(e).context(p.display()))?;
    }
    let mut w = csv::Writer::from_writer(create(&out.join("crf.csv"))?);
    w.write_record(["drug_id", "disease_id", "score"])?;
    for (pair, v) in &data.crf {
        w.write_record([&pair.drug, &pair.disease, &v.to_string()])?;
    }
    w.flush()?;
    let names: Vec<String> = variants.iter().map(|v| format!("\"{v}\"")).collect();
    let toml = format!(
        "seed = {seed}\nruns = {runs}\nprediction_fraction = 0.25\nevidence_ratios = [0.0, 0.25, 0.5, 0.75]\n\
         variants = [{variants}]\n\n[inputs]\nontologies = \"ontologies.tsv\"\nnarratives = \"narratives.tsv\"\n\
         labels = \"labels.tsv\"\ncrf = \"crf.csv\"\n\n[output]\ndir = \"results\"\n",
        seed = cfg.seed,
        variants = names.join(", "),
    );
    let mut w = create(&out.join("experiment.toml"))?;
    w.write_all(toml.as_bytes())?;
    w.flush()?;
    eprintln!(
        "wrote planted graph to {} (base rate {:.3})",
        out.display(),
        data.base_rate()
    );
    Ok(())
}
