use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn kgpsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgpsl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Medrol and Baycadron share a pharmacologic class and Baycadron treats
/// dermatitis; the Medrol pair is the target.
fn fig1(dir: &Path) -> (String, String) {
    let graph = dir.join("fig1.tsv");
    fs::write(
        &graph,
        "node\tdrug\tmedrol\nnode\tdrug\tbaycadron\nnode\tdisease\tdermatitis\nnode\tattribute_value\tx\n\
         edge\thas_pharmclass\tmedrol\tx\t1\nedge\thas_pharmclass\tbaycadron\tx\t1\n\
         edge\ttreats\tbaycadron\tdermatitis\t1\n",
    )
    .unwrap();
    let targets = dir.join("targets.tsv");
    fs::write(&targets, "drug\tdisease\tgold\nmedrol\tdermatitis\t1\n").unwrap();
    (s(&graph), s(&targets))
}

/// Minimizes the dumped squared hinges (unit weights) over a 1e-4 grid.
fn dump_minimizer(dump: &str) -> f64 {
    let rules: Vec<(f64, f64)> = dump
        .lines()
        .skip(1)
        .map(|line| {
            let terms = line.split('\t').nth(2).unwrap();
            let (mut c0, mut c) = (0.0, 0.0);
            for t in terms.split(';') {
                let (k, v) = t.rsplit_once('=').unwrap();
                let v: f64 = v.parse().unwrap();
                if k == "const" {
                    c0 = v;
                } else {
                    c += v;
                }
            }
            (c, c0)
        })
        .collect();
    (0..=10_000)
        .map(|k| k as f64 / 10_000.0)
        .map(|y| {
            let e: f64 = rules
                .iter()
                .map(|(c, c0)| (c * y + c0).max(0.0).powi(2))
                .sum();
            (y, e)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

fn score_of(csv: &str) -> f64 {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("drug,disease,score"));
    lines
        .next()
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn fig1_end_to_end() {
    let dir = TempDir::new().unwrap();
    let (graph, targets) = fig1(dir.path());
    let dump = kgpsl(&["ground", "--graph", &graph, "--targets", &targets]);
    assert!(dump.status.success(), "{}", stderr(&dump));
    let dump = String::from_utf8(dump.stdout).unwrap();
    assert!(dump.starts_with("schema_id\tconstants\tcoefficients\n"));
    assert!(dump.contains("3a_has_pharmclass"));

    let out = dir.path().join("scores.csv");
    let diag = dir.path().join("diag.json");
    let o = kgpsl(&[
        "infer",
        "--graph",
        &graph,
        "--targets",
        &targets,
        "--out",
        &s(&out),
        "--diagnostics",
        &s(&diag),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let score = score_of(&fs::read_to_string(&out).unwrap());
    assert!(score > 0.5, "score {score}");
    assert!((score - dump_minimizer(&dump)).abs() < 1e-3);
    let d: serde_json::Value = serde_json::from_str(&fs::read_to_string(&diag).unwrap()).unwrap();
    assert_eq!(d["converged"], true);
}

#[test]
fn learned_weights_feed_inference() {
    let dir = TempDir::new().unwrap();
    let (graph, targets) = fig1(dir.path());
    let weights = dir.path().join("w.tsv");
    let o = kgpsl(&[
        "learn",
        "--graph",
        &graph,
        "--targets",
        &targets,
        "--out",
        &s(&weights),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&weights).unwrap();
    assert!(text.starts_with("rule\trelative_weight\tgroundings\tinitial_weight\tlearned_weight\n"));
    assert!(text.contains("3a_has_pharmclass\t"));
    let o = kgpsl(&[
        "infer",
        "--graph",
        &graph,
        "--targets",
        &targets,
        "--weights",
        &s(&weights),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let score = score_of(&String::from_utf8(o.stdout).unwrap());
    assert!((0.0..=1.0).contains(&score));
}

#[test]
fn explicit_rules_file() {
    let dir = TempDir::new().unwrap();
    let (graph, targets) = fig1(dir.path());
    let rules = dir.path().join("r.psl");
    fs::write(&rules, "1: -> treats(D,Dis)\n1: -> !treats(D,Dis)\n").unwrap();
    let o = kgpsl(&[
        "infer",
        "--graph",
        &graph,
        "--targets",
        &targets,
        "--rules",
        &s(&rules),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!((score_of(&String::from_utf8(o.stdout).unwrap()) - 0.5).abs() < 1e-3);
    fs::write(&rules, "1: -> treats(D,\n").unwrap();
    let o = kgpsl(&[
        "ground",
        "--graph",
        &graph,
        "--targets",
        &targets,
        "--rules",
        &s(&rules),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_targets_exit_1() {
    let dir = TempDir::new().unwrap();
    let (graph, _) = fig1(dir.path());
    let empty = dir.path().join("none.tsv");
    fs::write(&empty, "# nothing\n").unwrap();
    let o = kgpsl(&["infer", "--graph", &graph, "--targets", &s(&empty)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn strict_non_convergence_exit_3() {
    let dir = TempDir::new().unwrap();
    let (graph, targets) = fig1(dir.path());
    let o = kgpsl(&[
        "infer",
        "--graph",
        &graph,
        "--targets",
        &targets,
        "--strict",
        "--max-iters",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = kgpsl(&[
        "infer",
        "--graph",
        &graph,
        "--targets",
        &targets,
        "--max-iters",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn malformed_targets_exit_2() {
    let dir = TempDir::new().unwrap();
    let (graph, _) = fig1(dir.path());
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "medrol\tdermatitis\t7\n").unwrap();
    let o = kgpsl(&["infer", "--graph", &graph, "--targets", &s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn experiment_outputs() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let o = kgpsl(&[
        "synth",
        "--out",
        &s(root),
        "--runs",
        "2",
        "--variants",
        "text_only,narratives,full",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = kgpsl(&["experiment", &s(&root.join("experiment.toml"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let results = root.join("results");

    let mut rdr = csv::Reader::from_path(results.join("summary.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap(),
        vec!["variant", "evidence_ratio", "mean_auc", "std_auc", "runs"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 12);
    for r in &rows {
        let auc: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&auc));
        assert_eq!(&r[4], "2");
    }

    let runs = fs::read_to_string(results.join("runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 24);
    for line in runs.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["auc"].is_number());
    }
    let pr = csv::Reader::from_path(results.join("pr_curves.csv"))
        .unwrap()
        .into_records()
        .count();
    assert!(pr > 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(results.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["runs"], 2);
    assert_eq!(manifest["digests"].as_object().unwrap().len(), 4);

    // a changed input invalidates the manifest
    fs::write(root.join("crf.csv"), "drug_id,disease_id,score\n").unwrap();
    let o = kgpsl(&[
        "experiment",
        &s(&results.join("manifest.json")),
        "--out",
        &s(&root.join("again")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("changed"), "{}", stderr(&o));
}

#[test]
fn missing_crf_input_exit_2() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    assert!(kgpsl(&["synth", "--out", &s(root), "--runs", "1"])
        .status
        .success());
    let cfg = root.join("nocrf.toml");
    fs::write(
        &cfg,
        "runs = 1\nvariants = [\"full\"]\n[inputs]\nontologies = \"ontologies.tsv\"\n\
         narratives = \"narratives.tsv\"\nlabels = \"labels.tsv\"\n",
    )
    .unwrap();
    let o = kgpsl(&["experiment", &s(&cfg)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("CRF"), "{}", stderr(&o));

    fs::write(&cfg, "runs = 1\nvariants = [\"full\"]\n[inputs]\nlabels = \"labels.tsv\"\ncrf = \"absent.csv\"\n").unwrap();
    assert_eq!(kgpsl(&["experiment", &s(&cfg)]).status.code(), Some(2));
    fs::write(&cfg, "runs = 0\n").unwrap();
    assert_eq!(kgpsl(&["experiment", &s(&cfg)]).status.code(), Some(2));
}

#[test]
fn aggregate_outputs_and_errors() {
    let dir = TempDir::new().unwrap();
    let responses = dir.path().join("r.csv");
    let mut rows = String::from("worker_id,item_id,label\n");
    for item in ["i1", "i2", "i3"] {
        for w in 1..=5 {
            rows.push_str(&format!("w{w},{item},Treats\n"));
        }
    }
    fs::write(&responses, rows).unwrap();
    let out = dir.path().join("agg.json");
    let table = dir.path().join("agree.tsv");
    let o = kgpsl(&[
        "aggregate",
        &s(&responses),
        "--out",
        &s(&out),
        "--agreement",
        &s(&table),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["labels"]["i2"], "Treats");
    let t = fs::read_to_string(&table).unwrap();
    assert!(t.contains("Treats\t3\t100.0"), "{t}");

    fs::write(&responses, "w1,i1,Treats\nw2,i1\n").unwrap();
    let o = kgpsl(&["aggregate", &s(&responses), "--out", &s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    fs::write(&responses, "worker_id,item_id,label\n").unwrap();
    let o = kgpsl(&["aggregate", &s(&responses), "--out", &s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn narratives_and_drug_filter() {
    let dir = TempDir::new().unwrap();
    let texts = dir.path().join("notes.tsv");
    fs::write(
        &texts,
        "n1\tStarted Medrol for dermatitis.\nn2\tNo drugs here.\n",
    )
    .unwrap();
    let lex = dir.path().join("lex.tsv");
    fs::write(
        &lex,
        "medrol\tdrug\tmedrol\ndermatitis\tdisease\tdermatitis\n",
    )
    .unwrap();
    let out = dir.path().join("narr.tsv");
    let o = kgpsl(&[
        "build-narratives",
        &s(&texts),
        "--lexicon",
        &s(&lex),
        "--out",
        &s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let g = fs::read_to_string(&out).unwrap();
    assert_eq!(
        g.lines()
            .filter(|l| l.starts_with("edge\tis_mentioned_in"))
            .count(),
        2
    );

    let (graph, _) = fig1(dir.path());
    let filtered = dir.path().join("f.tsv");
    let o = kgpsl(&[
        "filter-drugs",
        &graph,
        "--out",
        &s(&filtered),
        "--drugs",
        "baycadron",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let g = fs::read_to_string(&filtered).unwrap();
    assert!(!g.contains("baycadron"));
    assert!(g.contains("medrol"));
    let o = kgpsl(&["filter-drugs", &graph, "--out", &s(&filtered)]);
    assert_eq!(o.status.code(), Some(2));
}
