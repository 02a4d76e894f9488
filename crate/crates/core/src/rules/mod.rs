//! Weighted first-order rule schemas and their text syntax.
//!
//! ```text
//! # priors
//! @prior_neg 1.0 [prior]: -> !treats(D, Dis)
//! @3a_has_route 1.0 [ontologies]: has_route(D1, X) & has_route(D2, X) & (D1 != D2)
//!     & treats(D1, Dis) -> treats(D2, Dis)
//! ```
//!
//! A rule is `("@" id)? "="? weight ("[" source "]")? ":" body? "->" head ("^" 1|2)?`
//! on a single line. Identifiers in argument position are variables; quoted
//! strings are constants. A leading `=` marks the weight as fixed (not
//! learned). The hinge exponent defaults to 2 unless a `%hinge linear`
//! directive or a `^1` suffix says otherwise.

mod parser;
mod validate;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{CRF_TREATS, DISEASE_RELATIONS, DRUG_RELATIONS, IS_MENTIONED_IN, TREATS};

pub use parser::parse_rules;
pub use validate::{infer_variable_kinds, validate, Diagnostic, DiagnosticKind};

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: unknown directive `{name}`")]
    UnknownDirective { line: usize, name: String },
    #[error("line {line}: unknown source tag `{name}`")]
    UnknownSource { line: usize, name: String },
    #[error("line {line}: negative weight {weight}")]
    NegativeWeight { line: usize, weight: f64 },
    #[error("line {line}: duplicate rule id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {message}")]
    Unsafe { line: usize, message: String },
}

/// Where a rule's evidence comes from; weight initialization balances
/// contributions across these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Prior,
    Crf,
    Ontologies,
    Narratives,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Prior => "prior",
            Source::Crf => "crf",
            Source::Ontologies => "ontologies",
            Source::Narratives => "narratives",
        }
    }

    pub fn parse(s: &str) -> Option<Source> {
        match s.to_lowercase().as_str() {
            "prior" | "priors" => Some(Source::Prior),
            "crf" | "text" => Some(Source::Crf),
            "ont" | "ontology" | "ontologies" => Some(Source::Ontologies),
            "narr" | "narrative" | "narratives" => Some(Source::Narratives),
            _ => None,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Var(String),
    Const(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => f.write_str(v),
            Term::Const(c) => write!(f, "'{}'", c.replace('\'', "\\'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Literal {
    pub predicate: String,
    pub args: Vec<Term>,
    pub negated: bool,
}

impl Literal {
    pub fn new(predicate: &str, vars: &[&str]) -> Self {
        Literal {
            predicate: predicate.to_lowercase(),
            args: vars.iter().map(|v| Term::Var(v.to_string())).collect(),
            negated: false,
        }
    }

    pub fn not(mut self) -> Self {
        self.negated = !self.negated;
        self
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("!")?;
        }
        let args: Vec<String> = self.args.iter().map(Term::to_string).collect();
        write!(f, "{}({})", self.predicate, args.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BodyTerm {
    Literal(Literal),
    /// `(A != B)` over two variables.
    NotEqual(String, String),
}

impl fmt::Display for BodyTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BodyTerm::Literal(l) => l.fmt(f),
            BodyTerm::NotEqual(a, b) => write!(f, "({a} != {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSchema {
    pub id: String,
    pub weight: f64,
    pub learnable: bool,
    pub source: Source,
    pub body: Vec<BodyTerm>,
    pub head: Literal,
    /// Hinge exponent 2 when set, 1 otherwise.
    pub squared: bool,
}

impl RuleSchema {
    pub fn literals(&self) -> impl Iterator<Item = &Literal> {
        self.body.iter().filter_map(|t| match t {
            BodyTerm::Literal(l) => Some(l),
            BodyTerm::NotEqual(..) => None,
        })
    }

    pub fn inequalities(&self) -> impl Iterator<Item = (&str, &str)> {
        self.body.iter().filter_map(|t| match t {
            BodyTerm::NotEqual(a, b) => Some((a.as_str(), b.as_str())),
            BodyTerm::Literal(_) => None,
        })
    }

    pub fn is_prior(&self) -> bool {
        self.literals().next().is_none()
    }

    pub fn exponent(&self) -> u8 {
        if self.squared {
            2
        } else {
            1
        }
    }

    /// Structural safety: head and inequality variables must occur in a body
    /// literal, unless the body is empty.
    pub fn check_safety(&self) -> Result<(), String> {
        let body_vars: BTreeSet<&str> = self.literals().flat_map(Literal::variables).collect();
        if !self.is_prior() {
            if let Some(v) = self.head.variables().find(|v| !body_vars.contains(v)) {
                return Err(format!("head variable `{v}` does not occur in the body"));
            }
        }
        for (a, b) in self.inequalities() {
            for v in [a, b] {
                if !body_vars.contains(v) {
                    return Err(format!(
                        "inequality variable `{v}` does not occur in a body literal"
                    ));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for RuleSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{} ", self.id)?;
        if !self.learnable {
            f.write_str("=")?;
        }
        write!(f, "{:?} [{}]: ", self.weight, self.source)?;
        let body: Vec<String> = self.body.iter().map(BodyTerm::to_string).collect();
        if !body.is_empty() {
            write!(f, "{} ", body.join(" & "))?;
        }
        write!(f, "-> {}", self.head)?;
        if !self.squared {
            f.write_str(" ^1")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleSet {
    pub rules: Vec<RuleSchema>,
}

impl RuleSet {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RuleSchema> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RuleSchema> {
        self.rules.iter()
    }

    /// Forces every rule to one hinge exponent.
    pub fn with_hinge(mut self, squared: bool) -> Self {
        for r in &mut self.rules {
            r.squared = squared;
        }
        self
    }
}

/// Renders a rule set in the syntax accepted by [`parse_rules`].
pub fn render_rules(rs: &RuleSet) -> String {
    let mut out = String::new();
    for r in &rs.rules {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

/// Which graphs contribute rules to a default model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphSources {
    pub ontologies: bool,
    pub narratives: bool,
}

fn schema(id: String, source: Source, body: Vec<BodyTerm>, head: Literal) -> RuleSchema {
    RuleSchema {
        id,
        weight: 1.0,
        learnable: true,
        source,
        body,
        head,
        squared: true,
    }
}

fn lit(l: Literal) -> BodyTerm {
    BodyTerm::Literal(l)
}

/// Disease-side propagation: diseases sharing `relation` values are treated
/// by the same drugs. `positive` selects the `a` variant.
fn disease_rule(relation: &str, positive: bool, source: Source) -> RuleSchema {
    let sign = |l: Literal| if positive { l } else { l.not() };
    schema(
        format!("2{}_{}", if positive { 'a' } else { 'b' }, relation),
        source,
        vec![
            lit(Literal::new(relation, &["Dis1", "X"])),
            lit(Literal::new(relation, &["Dis2", "X"])),
            BodyTerm::NotEqual("Dis1".into(), "Dis2".into()),
            lit(sign(Literal::new(TREATS, &["D", "Dis1"]))),
        ],
        sign(Literal::new(TREATS, &["D", "Dis2"])),
    )
}

/// Drug-side propagation: drugs sharing `relation` values treat the same
/// diseases.
fn drug_rule(relation: &str, positive: bool, source: Source) -> RuleSchema {
    let sign = |l: Literal| if positive { l } else { l.not() };
    schema(
        format!("3{}_{}", if positive { 'a' } else { 'b' }, relation),
        source,
        vec![
            lit(Literal::new(relation, &["D1", "X"])),
            lit(Literal::new(relation, &["D2", "X"])),
            BodyTerm::NotEqual("D1".into(), "D2".into()),
            lit(sign(Literal::new(TREATS, &["D1", "Dis"]))),
        ],
        sign(Literal::new(TREATS, &["D2", "Dis"])),
    )
}

/// The drug/disease rule templates: two priors, optionally the two CRF
/// agreement rules, and the propagation rules for each requested graph.
pub fn default_rule_templates(graphs: GraphSources, include_crf: bool) -> RuleSet {
    let mut rules = vec![
        schema(
            "prior_pos".into(),
            Source::Prior,
            vec![],
            Literal::new(TREATS, &["D", "Dis"]),
        ),
        schema(
            "prior_neg".into(),
            Source::Prior,
            vec![],
            Literal::new(TREATS, &["D", "Dis"]).not(),
        ),
    ];
    if include_crf {
        rules.push(schema(
            "1a".into(),
            Source::Crf,
            vec![lit(Literal::new(CRF_TREATS, &["D", "Dis"]))],
            Literal::new(TREATS, &["D", "Dis"]),
        ));
        rules.push(schema(
            "1b".into(),
            Source::Crf,
            vec![lit(Literal::new(CRF_TREATS, &["D", "Dis"]).not())],
            Literal::new(TREATS, &["D", "Dis"]).not(),
        ));
    }
    if graphs.ontologies {
        for r in DISEASE_RELATIONS {
            rules.push(disease_rule(r, true, Source::Ontologies));
            rules.push(disease_rule(r, false, Source::Ontologies));
        }
        for s in DRUG_RELATIONS {
            rules.push(drug_rule(s, true, Source::Ontologies));
            rules.push(drug_rule(s, false, Source::Ontologies));
        }
    }
    if graphs.narratives {
        rules.push(disease_rule(IS_MENTIONED_IN, true, Source::Narratives));
        rules.push(disease_rule(IS_MENTIONED_IN, false, Source::Narratives));
        rules.push(drug_rule(IS_MENTIONED_IN, true, Source::Narratives));
        rules.push(drug_rule(IS_MENTIONED_IN, false, Source::Narratives));
    }
    RuleSet { rules }
}
