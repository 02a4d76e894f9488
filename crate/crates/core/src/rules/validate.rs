use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{Literal, RuleSchema, RuleSet, Term};
use crate::kg::{KindSet, KnowledgeGraph, PredicateSignature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DiagnosticKind {
    UnknownPredicate,
    Arity,
    KindConflict,
    UnknownConstant,
    Unbindable,
    NoOpenLiteral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub rule_id: String,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule `{}`: {}", self.rule_id, self.message)
    }
}

fn all_literals(rule: &RuleSchema) -> impl Iterator<Item = &Literal> {
    rule.literals().chain(std::iter::once(&rule.head))
}

/// Kind sets each variable may take, intersected over every position it
/// occupies. Returns diagnostics instead when the rule does not type-check.
pub fn infer_variable_kinds(
    rule: &RuleSchema,
    signatures: &BTreeMap<String, PredicateSignature>,
) -> Result<BTreeMap<String, KindSet>, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut kinds: BTreeMap<String, KindSet> = BTreeMap::new();
    let diag = |kind, message: String| Diagnostic {
        rule_id: rule.id.clone(),
        kind,
        message,
    };
    for lit in all_literals(rule) {
        let Some(sig) = signatures.get(&lit.predicate) else {
            diags.push(diag(
                DiagnosticKind::UnknownPredicate,
                format!("unknown predicate `{}`", lit.predicate),
            ));
            continue;
        };
        if sig.arity() != lit.args.len() {
            diags.push(diag(
                DiagnosticKind::Arity,
                format!(
                    "`{}` expects {} arguments, got {}",
                    lit.predicate,
                    sig.arity(),
                    lit.args.len()
                ),
            ));
            continue;
        }
        for (arg, allowed) in lit.args.iter().zip(&sig.arg_kinds) {
            if let Term::Var(v) = arg {
                let slot = kinds.entry(v.clone()).or_insert(KindSet::ANY);
                *slot = slot.intersect(*allowed);
            }
        }
    }
    for (v, set) in &kinds {
        if set.is_empty() {
            diags.push(diag(
                DiagnosticKind::KindConflict,
                format!("variable `{v}` is used with incompatible entity kinds"),
            ));
        }
    }
    if diags.is_empty() {
        Ok(kinds)
    } else {
        Err(diags)
    }
}

/// Checks a rule set against a graph's predicate signatures and nodes.
/// An empty result means the rules can be grounded on this graph.
pub fn validate(rs: &RuleSet, g: &KnowledgeGraph) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for rule in rs.iter() {
        let diag = |kind, message: String| Diagnostic {
            rule_id: rule.id.clone(),
            kind,
            message,
        };
        let kinds = match infer_variable_kinds(rule, g.signatures()) {
            Ok(k) => k,
            Err(mut d) => {
                out.append(&mut d);
                continue;
            }
        };
        for lit in all_literals(rule) {
            let sig = &g.signatures()[&lit.predicate];
            for (arg, allowed) in lit.args.iter().zip(&sig.arg_kinds) {
                if let Term::Const(c) = arg {
                    let id = crate::kg::normalize_id(c);
                    let found = allowed.iter().any(|k| {
                        g.contains_node(&crate::kg::EntityRef {
                            kind: k,
                            id: id.clone(),
                        })
                    });
                    if !found {
                        out.push(diag(
                            DiagnosticKind::UnknownConstant,
                            format!("constant `{c}` is not a {allowed} node"),
                        ));
                    }
                }
            }
        }
        // variables must be bound by an open literal or a positive closed one
        let mut bindable: BTreeSet<&str> = BTreeSet::new();
        let mut has_open = false;
        for lit in all_literals(rule) {
            let closed = g.signatures()[&lit.predicate].closed;
            has_open |= !closed;
            if !closed || !lit.negated {
                bindable.extend(lit.variables());
            }
        }
        for v in kinds.keys() {
            if !bindable.contains(v.as_str()) {
                out.push(diag(
                    DiagnosticKind::Unbindable,
                    format!("variable `{v}` only occurs in negated closed literals"),
                ));
            }
        }
        if !has_open {
            out.push(diag(
                DiagnosticKind::NoOpenLiteral,
                "rule mentions no open predicate and can never ground".into(),
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{default_rule_templates, parse_rules, GraphSources};

    #[test]
    fn default_rules_are_valid() {
        let rs = default_rule_templates(
            GraphSources {
                ontologies: true,
                narratives: true,
            },
            true,
        );
        assert!(validate(&rs, &KnowledgeGraph::new()).is_empty());
    }

    #[test]
    fn unknown_predicate() {
        let rs = parse_rules("1: has_flavor(D, X) & treats(D, Y) -> treats(D, Y)").unwrap();
        let d = validate(&rs, &KnowledgeGraph::new());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::UnknownPredicate);
        assert!(d[0].message.contains("unknown predicate"));
    }

    #[test]
    fn kind_conflict() {
        let rs =
            parse_rules("1: treats(D, Dis) & has_finding_site(D, X) -> treats(D, Dis)").unwrap();
        let d = validate(&rs, &KnowledgeGraph::new());
        assert!(d.iter().any(|d| d.kind == DiagnosticKind::KindConflict));
    }

    #[test]
    fn arity_and_binding_problems() {
        let rs = parse_rules("1: treats(D) & has_route(D, X) -> treats(D, X)").unwrap();
        let d = validate(&rs, &KnowledgeGraph::new());
        assert!(d.iter().any(|d| d.kind == DiagnosticKind::Arity));

        let rs = parse_rules("1: !has_route(D, X) & treats(D, Dis) -> treats(D, Dis)").unwrap();
        let d = validate(&rs, &KnowledgeGraph::new());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::Unbindable);

        let rs = parse_rules("1: has_route(D, X) -> has_route(D, X)").unwrap();
        let d = validate(&rs, &KnowledgeGraph::new());
        assert_eq!(d[0].kind, DiagnosticKind::NoOpenLiteral);

        let rs = parse_rules("1: crf_treats('medrol', Dis) -> treats('medrol', Dis)").unwrap();
        let d = validate(&rs, &KnowledgeGraph::new());
        assert!(d.iter().all(|d| d.kind == DiagnosticKind::UnknownConstant));
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn mention_variables_narrow_to_one_kind() {
        let rs = default_rule_templates(
            GraphSources {
                ontologies: false,
                narratives: true,
            },
            false,
        );
        let rule = rs.get("3a_is_mentioned_in").unwrap();
        let kinds = infer_variable_kinds(rule, KnowledgeGraph::new().signatures()).unwrap();
        assert_eq!(kinds["D1"].single(), Some(crate::kg::EntityKind::Drug));
        assert_eq!(kinds["X"].single(), Some(crate::kg::EntityKind::Narrative));
    }
}
