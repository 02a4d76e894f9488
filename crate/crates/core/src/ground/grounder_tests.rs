use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use super::grounder::schema_forms;
use super::*;
use crate::kg::{EntityKind, EntityRef, KnowledgeGraph};
use crate::rules::{default_rule_templates, GraphSources, RuleSet, Term};

fn ent(kind: EntityKind, id: &str) -> EntityRef {
    EntityRef::new(kind, id).unwrap()
}

fn drug(id: &str) -> EntityRef {
    ent(EntityKind::Drug, id)
}

fn disease(id: &str) -> EntityRef {
    ent(EntityKind::Disease, id)
}

fn attr(id: &str) -> EntityRef {
    ent(EntityKind::AttributeValue, id)
}

fn ontology_rules() -> RuleSet {
    with_crf(false)
}

fn with_crf(crf: bool) -> RuleSet {
    default_rule_templates(
        GraphSources {
            ontologies: true,
            narratives: false,
        },
        crf,
    )
}

/// Medrol and Baycadron share a pharmacologic class; Baycadron is known to
/// treat dermatitis and the Medrol pair is the target.
fn fig1() -> (KnowledgeGraph, Vec<Atom>) {
    let mut g = KnowledgeGraph::new();
    for d in ["medrol", "baycadron"] {
        g.add_atom(Atom::new("has_pharmclass", vec![drug(d), attr("x")]), 1.0)
            .unwrap();
    }
    g.add_atom(Atom::treats("baycadron", "dermatitis").unwrap(), 1.0)
        .unwrap();
    let target = Atom::treats("medrol", "dermatitis").unwrap();
    g.add_target(target.clone(), Some(1.0)).unwrap();
    (g, vec![target])
}

#[test]
fn fig1_fixture() {
    let (g, targets) = fig1();
    let m = ground(&ontology_rules(), &g, &targets).unwrap();
    let counts = grounding_counts(&m);
    assert_eq!(counts["3a_has_pharmclass"], 1);
    assert_eq!(counts["3b_has_pharmclass"], 1);
    assert_eq!(counts["prior_pos"], 1);
    assert_eq!(counts["prior_neg"], 1);
    assert_eq!(counts.values().sum::<usize>(), 4);
    assert_eq!(counts.values().sum::<usize>(), m.rules.len());

    let r3a = m
        .rules
        .iter()
        .find(|r| m.schemas[r.schema].id == "3a_has_pharmclass")
        .unwrap();
    assert_eq!(r3a.coeffs, vec![(0, -1.0)]);
    assert_eq!(r3a.constant, 1.0);
    assert_eq!(r3a.distance(&[0.0]), 1.0);
    assert_eq!(r3a.distance(&[1.0]), 0.0);
    assert!(r3a.binding.contains("D1=baycadron;D2=medrol"));
    // the observed Baycadron pair only touches the priors as a constant
    let prior = &m.schemas.iter().find(|s| s.id == "prior_neg").unwrap();
    assert_eq!(prior.inactive, 1);
}

#[test]
fn no_shared_values_only_priors() {
    let mut g = KnowledgeGraph::new();
    g.add_atom(Atom::new("has_pharmclass", vec![drug("a"), attr("x")]), 1.0)
        .unwrap();
    g.add_atom(Atom::new("has_pharmclass", vec![drug("b"), attr("y")]), 1.0)
        .unwrap();
    g.add_atom(
        Atom::new("has_finding_site", vec![disease("p"), attr("s1")]),
        1.0,
    )
    .unwrap();
    g.add_atom(
        Atom::new("has_finding_site", vec![disease("q"), attr("s2")]),
        1.0,
    )
    .unwrap();
    let mut targets = Vec::new();
    for (d, dis) in [("a", "p"), ("a", "q"), ("b", "p"), ("b", "q")] {
        let t = Atom::treats(d, dis).unwrap();
        g.add_target(t.clone(), Some(0.0)).unwrap();
        targets.push(t);
    }
    let m = ground(&ontology_rules(), &g, &targets).unwrap();
    let counts = grounding_counts(&m);
    assert_eq!(counts.len(), 16);
    for (id, n) in &counts {
        let expected = if id.starts_with("prior") { 4 } else { 0 };
        assert_eq!(*n, expected, "{id}");
    }
}

#[test]
fn priors_once_per_target() {
    let mut g = KnowledgeGraph::new();
    let targets: Vec<Atom> = (0..5)
        .map(|i| Atom::treats(&format!("d{i}"), "flu").unwrap())
        .collect();
    for t in &targets {
        g.add_target(t.clone(), None).unwrap();
    }
    let rs = default_rule_templates(GraphSources::default(), false);
    let m = ground(&rs, &g, &targets).unwrap();
    assert_eq!(
        grounding_counts(&m),
        BTreeMap::from([("prior_neg".to_string(), 5), ("prior_pos".to_string(), 5)])
    );
}

#[test]
fn empty_targets_and_unknown_targets_fail() {
    let (g, _) = fig1();
    assert!(matches!(
        ground(&ontology_rules(), &g, &[]),
        Err(GroundError::EmptyTargets)
    ));
    let stray = Atom::treats("aspirin", "gout").unwrap();
    assert!(matches!(
        ground(&ontology_rules(), &g, &[stray]),
        Err(GroundError::UnknownTarget(_))
    ));
}

#[test]
fn empty_model_counts() {
    let m = GroundedModel {
        variables: vec![],
        gold: vec![],
        rules: vec![],
        schemas: vec![],
    };
    assert!(grounding_counts(&m).is_empty());
}

#[test]
fn dump_lists_every_rule() {
    let (g, targets) = fig1();
    let m = ground(&ontology_rules(), &g, &targets).unwrap();
    let mut buf = Vec::new();
    write_grounding_dump(&m, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), m.rules.len() + 1);
    assert!(text.contains("3a_has_pharmclass\t"));
    assert!(text.contains("treats(medrol, dermatitis)=-1"));
}

/// Boolean corners: distance 0 exactly when the classical implication holds.
#[test]
fn corners_match_classical_logic() {
    for k in 0..=4usize {
        for mask in 0..(1u32 << (k + 1)) {
            for neg_mask in 0..(1u32 << (k + 1)) {
                let truth = |i: usize| (mask >> i) & 1 == 1;
                let negated = |i: usize| (neg_mask >> i) & 1 == 1;
                let lit = |i: usize| Truth::Var {
                    index: i,
                    negated: negated(i),
                };
                let body: Vec<Truth> = (0..k).map(lit).collect();
                let (coeffs, constant) = encode_implication(&body, lit(k));
                let r = GroundRule {
                    schema: 0,
                    coeffs,
                    constant,
                    exponent: 1,
                    binding: String::new(),
                };
                let y: Vec<f64> = (0..=k).map(|i| truth(i) as u8 as f64).collect();
                let val = |i: usize| truth(i) != negated(i);
                let holds = !(0..k).all(val) || val(k);
                assert_eq!(
                    r.distance(&y) == 0.0,
                    holds,
                    "k={k} mask={mask} neg={neg_mask}"
                );
            }
        }
    }
}

/// Reference grounding by enumerating every assignment of every variable
/// over all nodes, evaluating literals directly on the graph.
fn brute_force(
    rs: &RuleSet,
    g: &KnowledgeGraph,
    targets: &[Atom],
) -> BTreeMap<String, Vec<String>> {
    let nodes: Vec<&EntityRef> = g.nodes().iter().collect();
    let target_pos: BTreeMap<&Atom, usize> =
        targets.iter().enumerate().map(|(i, a)| (a, i)).collect();
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for rule in rs.iter() {
        let mut vars: Vec<&str> = rule.literals().flat_map(|l| l.variables()).collect();
        vars.extend(rule.head.variables());
        vars.sort();
        vars.dedup();
        let mut forms = BTreeSet::new();
        let mut choice = vec![0usize; vars.len()];
        'outer: loop {
            let bind: BTreeMap<&str, &EntityRef> = vars
                .iter()
                .zip(&choice)
                .map(|(v, c)| (*v, nodes[*c]))
                .collect();
            let ok_neq = rule.inequalities().all(|(a, b)| bind[a] != bind[b]);
            let mut coeffs: BTreeMap<usize, f64> = BTreeMap::new();
            let mut constant = 0.0;
            let mut valid = ok_neq;
            let lits: Vec<(&crate::rules::Literal, f64)> = rule
                .literals()
                .map(|l| (l, 1.0))
                .chain(std::iter::once((&rule.head, -1.0)))
                .collect();
            let k = lits.len() - 1;
            constant -= k as f64 - 1.0;
            for (lit, sign) in &lits {
                if !valid {
                    break;
                }
                let sig = &g.signatures()[&lit.predicate];
                let args: Vec<EntityRef> = lit
                    .args
                    .iter()
                    .map(|t| match t {
                        Term::Var(v) => bind[v.as_str()].clone(),
                        Term::Const(_) => unreachable!(),
                    })
                    .collect();
                if args
                    .iter()
                    .zip(&sig.arg_kinds)
                    .any(|(a, k)| !k.contains(a.kind))
                {
                    valid = false;
                    break;
                }
                let atom = Atom::new(&lit.predicate, args);
                let v = if sig.closed {
                    g.observed_value(&atom)
                } else if let Some(i) = target_pos.get(&atom) {
                    let (c, off) = if lit.negated { (-1.0, 1.0) } else { (1.0, 0.0) };
                    *coeffs.entry(*i).or_default() += sign * c;
                    constant += sign * off;
                    continue;
                } else if let Some(Some(v)) = g.targets().get(&atom) {
                    *v
                } else {
                    valid = false;
                    break;
                };
                constant += sign * if lit.negated { 1.0 - v } else { v };
            }
            coeffs.retain(|_, c| *c != 0.0);
            if valid && !coeffs.is_empty() {
                let max: f64 = constant + coeffs.values().map(|c| c.max(0.0)).sum::<f64>();
                if max > 1e-12 {
                    let mut terms: Vec<String> = coeffs
                        .iter()
                        .map(|(i, c)| format!("{c}*{}", targets[*i]))
                        .collect();
                    terms.push(format!("{constant}"));
                    forms.insert(terms.join(" + "));
                }
            }
            // odometer over node choices
            for slot in choice.iter_mut() {
                *slot += 1;
                if *slot < nodes.len() {
                    continue 'outer;
                }
                *slot = 0;
            }
            break;
        }
        if !forms.is_empty() {
            out.insert(rule.id.clone(), forms.into_iter().collect());
        }
    }
    out
}

#[derive(Debug, Clone)]
struct RandomGraph {
    pharm: Vec<(usize, usize)>,
    site: Vec<(usize, usize)>,
    crf: Vec<(usize, usize)>,
    /// 0 = target, 1 = observed true, 2 = observed false, 3 = unlabeled.
    pairs: Vec<(usize, usize, u8)>,
}

fn random_graph() -> impl Strategy<Value = RandomGraph> {
    (
        prop::collection::vec((0..3usize, 0..2usize), 0..5),
        prop::collection::vec((0..3usize, 0..2usize), 0..5),
        prop::collection::vec((0..3usize, 0..3usize), 0..3),
        prop::collection::vec((0..3usize, 0..3usize, 0..4u8), 1..8),
    )
        .prop_map(|(pharm, site, crf, pairs)| RandomGraph {
            pharm,
            site,
            crf,
            pairs,
        })
}

fn materialize(spec: &RandomGraph) -> Option<(KnowledgeGraph, Vec<Atom>)> {
    let mut g = KnowledgeGraph::new();
    let d = |i: usize| drug(&format!("drug{i}"));
    let s = |i: usize| disease(&format!("dis{i}"));
    for &(a, x) in &spec.pharm {
        g.add_atom(
            Atom::new("has_pharmclass", vec![d(a), attr(&format!("pc{x}"))]),
            1.0,
        )
        .unwrap();
    }
    for &(a, x) in &spec.site {
        g.add_atom(
            Atom::new("has_finding_site", vec![s(a), attr(&format!("fs{x}"))]),
            1.0,
        )
        .unwrap();
    }
    for &(a, b) in &spec.crf {
        g.add_atom(Atom::new("crf_treats", vec![d(a), s(b)]), 1.0)
            .unwrap();
    }
    let mut targets = Vec::new();
    let mut seen = BTreeSet::new();
    for &(a, b, label) in &spec.pairs {
        if !seen.insert((a, b)) {
            continue;
        }
        let atom = Atom::new("treats", vec![d(a), s(b)]);
        match label {
            0 => {
                g.add_target(atom.clone(), Some(1.0)).unwrap();
                targets.push(atom);
            }
            1 => g.add_target(atom, Some(1.0)).unwrap(),
            2 => g.add_target(atom, Some(0.0)).unwrap(),
            _ => g.add_target(atom, None).unwrap(),
        }
    }
    (!targets.is_empty()).then_some((g, targets))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn join_matches_brute_force(spec in random_graph()) {
        if let Some((g, targets)) = materialize(&spec) {
            let rs = with_crf(true);
            let m = ground(&rs, &g, &targets).unwrap();
            prop_assert_eq!(schema_forms(&m), brute_force(&rs, &g, &targets));
        }
    }

    #[test]
    fn grounding_is_deterministic(spec in random_graph()) {
        if let Some((g, targets)) = materialize(&spec) {
            let rs = ontology_rules();
            let a = ground(&rs, &g, &targets).unwrap();
            let b = ground(&rs, &g, &targets).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn adding_attributes_never_lowers_counts(spec in random_graph(), extra in (0..3usize, 0..2usize)) {
        if let Some((g, targets)) = materialize(&spec) {
            let rs = ontology_rules();
            let before = grounding_counts(&ground(&rs, &g, &targets).unwrap());
            let mut g2 = g.clone();
            g2.add_atom(
                Atom::new("has_pharmclass", vec![drug(&format!("drug{}", extra.0)), attr(&format!("pc{}", extra.1))]),
                1.0,
            ).unwrap();
            let after = grounding_counts(&ground(&rs, &g2, &targets).unwrap());
            for (id, n) in before {
                prop_assert!(after[&id] >= n, "{} dropped", id);
            }
        }
    }
}
