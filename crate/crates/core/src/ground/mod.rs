//! Grounding of rule schemas into hinge-loss potentials.
//!
//! Every ground rule is stored as a linear form `c·y + c0` over the target
//! variables; its distance to satisfaction is `max(0, c·y + c0)` and it adds
//! `w · distance^p` to the energy. Under Łukasiewicz semantics an
//! implication `b1 ∧ … ∧ bk ⇒ h` has distance
//! `max(0, Σ v(bi) − (k − 1) − v(h))` with `v(¬a) = 1 − v(a)`.

mod grounder;

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::kg::Atom;
use crate::rules::{Diagnostic, Source};

pub use grounder::ground;

#[derive(Debug, Error)]
pub enum GroundError {
    #[error("no target atoms to ground")]
    EmptyTargets,
    #[error("rules do not validate: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("target {0} is not an open-predicate atom over graph nodes")]
    UnknownTarget(String),
    #[error("assignment has {got} entries, model has {expected} variables")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Truth value of one literal occurrence in a grounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truth {
    /// Observed (or closed-world) value, negation already applied.
    Const(f64),
    /// Target variable `index`, read as `1 − y` when negated.
    Var { index: usize, negated: bool },
}

/// Linear form of the Łukasiewicz distance for `body ⇒ head`. Coefficients
/// on the same variable are merged; zero coefficients are dropped.
pub fn encode_implication(body: &[Truth], head: Truth) -> (Vec<(usize, f64)>, f64) {
    let mut constant = -(body.len() as f64 - 1.0);
    let mut coeffs: BTreeMap<usize, f64> = BTreeMap::new();
    let mut add = |t: Truth, sign: f64, constant: &mut f64| match t {
        Truth::Const(v) => *constant += sign * v,
        Truth::Var { index, negated } => {
            if negated {
                *constant += sign;
                *coeffs.entry(index).or_default() -= sign;
            } else {
                *coeffs.entry(index).or_default() += sign;
            }
        }
    };
    for t in body {
        add(*t, 1.0, &mut constant);
    }
    add(head, -1.0, &mut constant);
    let coeffs = coeffs.into_iter().filter(|(_, c)| *c != 0.0).collect();
    (coeffs, constant)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundRule {
    /// Index into [`GroundedModel::schemas`].
    pub schema: usize,
    /// Sparse coefficients, sorted by variable index.
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
    pub exponent: u8,
    /// Variable bindings, for inspection dumps.
    pub binding: String,
}

impl GroundRule {
    pub fn linear(&self, y: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|(i, c)| c * y[*i]).sum::<f64>()
    }

    pub fn distance(&self, y: &[f64]) -> f64 {
        self.linear(y).max(0.0)
    }

    /// `distance^p`, without the weight.
    pub fn potential(&self, y: &[f64]) -> f64 {
        let d = self.distance(y);
        if self.exponent == 2 {
            d * d
        } else {
            d
        }
    }

    /// Largest value of the linear form over the unit box.
    pub fn max_linear(&self) -> f64 {
        self.constant + self.coeffs.iter().map(|(_, c)| c.max(0.0)).sum::<f64>()
    }
}

/// Checked distance to satisfaction of one ground rule.
pub fn distance_to_satisfaction(rule: &GroundRule, y: &[f64]) -> Result<f64, GroundError> {
    if let Some(&(i, _)) = rule.coeffs.iter().find(|(i, _)| *i >= y.len()) {
        return Err(GroundError::DimensionMismatch {
            expected: i + 1,
            got: y.len(),
        });
    }
    Ok(rule.distance(y))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemaInfo {
    pub id: String,
    pub source: Source,
    pub weight: f64,
    pub learnable: bool,
    pub exponent: u8,
    /// Ground rules emitted for this schema.
    pub groundings: usize,
    /// Bindings that touched no target variable and were left out.
    pub inactive: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundedModel {
    pub variables: Vec<Atom>,
    /// Gold truth values of the variables, when known.
    pub gold: Vec<Option<f64>>,
    pub rules: Vec<GroundRule>,
    pub schemas: Vec<SchemaInfo>,
}

impl GroundedModel {
    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.schemas.iter().map(|s| s.weight).collect()
    }

    pub fn set_weights(&mut self, weights: &[f64]) {
        for (s, w) in self.schemas.iter_mut().zip(weights) {
            s.weight = *w;
        }
    }

    pub fn rule_weight(&self, rule: &GroundRule) -> f64 {
        self.schemas[rule.schema].weight
    }

    pub fn check_dimension(&self, y: &[f64]) -> Result<(), GroundError> {
        if y.len() != self.variables.len() {
            return Err(GroundError::DimensionMismatch {
                expected: self.variables.len(),
                got: y.len(),
            });
        }
        Ok(())
    }

    /// For each variable, the rules touching it with the variable's coefficient.
    pub fn incidence(&self) -> Vec<Vec<(usize, f64)>> {
        let mut inc = vec![Vec::new(); self.variables.len()];
        for (r, rule) in self.rules.iter().enumerate() {
            for &(i, c) in &rule.coeffs {
                inc[i].push((r, c));
            }
        }
        inc
    }

    /// Gold values with unknown entries treated as 0.
    pub fn gold_assignment(&self) -> Vec<f64> {
        self.gold.iter().map(|g| g.unwrap_or(0.0)).collect()
    }
}

/// Groundings per schema id. Sums to the number of ground rules.
pub fn grounding_counts(m: &GroundedModel) -> BTreeMap<String, usize> {
    m.schemas
        .iter()
        .map(|s| (s.id.clone(), s.groundings))
        .collect()
}

/// Writes `schema_id<TAB>constants<TAB>coefficients` rows.
pub fn write_grounding_dump<W: Write>(m: &GroundedModel, mut w: W) -> Result<(), GroundError> {
    writeln!(w, "schema_id\tconstants\tcoefficients")?;
    for rule in &m.rules {
        let mut terms = vec![format!("const={}", rule.constant)];
        terms.extend(
            rule.coeffs
                .iter()
                .map(|(i, c)| format!("{}={}", m.variables[*i], c)),
        );
        writeln!(
            w,
            "{}\t{}\t{}",
            m.schemas[rule.schema].id,
            rule.binding,
            terms.join(";")
        )?;
    }
    Ok(())
}


#[cfg(test)]
mod grounder_tests;
