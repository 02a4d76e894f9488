use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use super::{encode_implication, GroundError, GroundRule, GroundedModel, SchemaInfo, Truth};
use crate::kg::{normalize_id, Atom, EntityKind, EntityRef, KindSet, KnowledgeGraph};
use crate::rules::{infer_variable_kinds, validate, Literal, RuleSchema, RuleSet, Term};

const UNBOUND: u32 = u32::MAX;
/// Stands in for constants that name no graph node.
const MISSING: u32 = u32::MAX - 1;
const SATISFIED_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
enum Slot {
    Observed(f64),
    Target(usize),
}

#[derive(Default)]
struct Table {
    rows: Vec<Box<[u32]>>,
    slots: Vec<Slot>,
    by_position: Vec<HashMap<u32, Vec<u32>>>,
    lookup: HashMap<Box<[u32]>, u32>,
}

impl Table {
    fn push(&mut self, args: Box<[u32]>, slot: Slot) {
        let row = self.rows.len() as u32;
        if self.by_position.len() < args.len() {
            self.by_position.resize_with(args.len(), HashMap::new);
        }
        for (pos, e) in args.iter().enumerate() {
            self.by_position[pos].entry(*e).or_default().push(row);
        }
        self.lookup.insert(args.clone(), row);
        self.rows.push(args);
        self.slots.push(slot);
    }
}

struct Index {
    entities: Vec<EntityRef>,
    ids: HashMap<EntityRef, u32>,
    tables: HashMap<String, Table>,
}

impl Index {
    fn build(g: &KnowledgeGraph, targets: &HashMap<Atom, usize>) -> Index {
        let entities: Vec<EntityRef> = g.nodes().iter().cloned().collect();
        let ids: HashMap<EntityRef, u32> = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i as u32))
            .collect();
        let key = |a: &Atom| -> Box<[u32]> { a.args.iter().map(|e| ids[e]).collect() };
        let mut tables: HashMap<String, Table> = HashMap::new();
        for (atom, v) in g.observed() {
            tables
                .entry(atom.predicate.clone())
                .or_default()
                .push(key(atom), Slot::Observed(*v));
        }
        for (atom, gold) in g.targets() {
            let slot = match (targets.get(atom), gold) {
                (Some(i), _) => Slot::Target(*i),
                (None, Some(v)) => Slot::Observed(*v),
                (None, None) => continue,
            };
            tables
                .entry(atom.predicate.clone())
                .or_default()
                .push(key(atom), slot);
        }
        Index {
            entities,
            ids,
            tables,
        }
    }

    fn constant(&self, raw: &str, allowed: KindSet) -> u32 {
        let id = normalize_id(raw);
        allowed
            .iter()
            .find_map(|kind| {
                self.ids.get(&EntityRef {
                    kind,
                    id: id.clone(),
                })
            })
            .copied()
            .unwrap_or(MISSING)
    }
}

#[derive(Clone, Copy)]
enum Arg {
    Var(usize),
    Ent(u32),
}

struct Lit<'a> {
    table: Option<&'a Table>,
    closed: bool,
    negated: bool,
    args: Vec<Arg>,
}

impl Lit<'_> {
    /// Open literals bind through the target universe; positive closed ones
    /// through their observed atoms. Negated closed literals only filter.
    fn enumerable(&self) -> bool {
        !self.closed || !self.negated
    }
}

struct Search<'a> {
    /// Body literals first, head last.
    lits: Vec<Lit<'a>>,
    var_names: Vec<String>,
    var_kinds: Vec<KindSet>,
    not_equal: Vec<(usize, usize)>,
    entity_kinds: Vec<EntityKind>,
    entities: &'a [EntityRef],
    bound: Vec<u32>,
    resolved: Vec<Option<Truth>>,
    schema: usize,
    exponent: u8,
    seen: HashSet<(Vec<(usize, u64)>, u64)>,
    rules: Vec<GroundRule>,
    inactive: usize,
}

impl<'a> Search<'a> {
    fn new(
        schema: usize,
        rule: &RuleSchema,
        g: &KnowledgeGraph,
        index: &'a Index,
    ) -> Result<Search<'a>, GroundError> {
        let kinds = infer_variable_kinds(rule, g.signatures()).map_err(GroundError::Invalid)?;
        let var_names: Vec<String> = kinds.keys().cloned().collect();
        let var_kinds: Vec<KindSet> = kinds.values().copied().collect();
        let var_index: HashMap<&str, usize> = var_names
            .iter()
            .enumerate()
            .map(|(i, v)| (v.as_str(), i))
            .collect();
        let compile = |lit: &Literal| -> Lit<'a> {
            let sig = &g.signatures()[&lit.predicate];
            let args = lit
                .args
                .iter()
                .zip(&sig.arg_kinds)
                .map(|(t, allowed)| match t {
                    Term::Var(v) => Arg::Var(var_index[v.as_str()]),
                    Term::Const(c) => Arg::Ent(index.constant(c, *allowed)),
                })
                .collect();
            Lit {
                table: index.tables.get(&lit.predicate),
                closed: sig.closed,
                negated: lit.negated,
                args,
            }
        };
        let mut lits: Vec<Lit> = rule.literals().map(compile).collect();
        lits.push(compile(&rule.head));
        let not_equal = rule
            .inequalities()
            .map(|(a, b)| (var_index[a], var_index[b]))
            .collect();
        let n_lits = lits.len();
        Ok(Search {
            lits,
            bound: vec![UNBOUND; var_names.len()],
            var_names,
            var_kinds,
            not_equal,
            entity_kinds: index.entities.iter().map(|e| e.kind).collect(),
            entities: &index.entities,
            resolved: vec![None; n_lits],
            schema,
            exponent: rule.exponent(),
            seen: HashSet::new(),
            rules: Vec::new(),
            inactive: 0,
        })
    }

    fn arg_value(&self, a: Arg) -> u32 {
        match a {
            Arg::Var(v) => self.bound[v],
            Arg::Ent(e) => e,
        }
    }

    /// Truth value of a fully bound literal; `None` if the atom lies outside
    /// the target universe.
    fn evaluate(&self, li: usize) -> Option<Truth> {
        let lit = &self.lits[li];
        let key: Box<[u32]> = lit.args.iter().map(|a| self.arg_value(*a)).collect();
        let slot = lit
            .table
            .and_then(|t| t.lookup.get(&key).map(|r| t.slots[*r as usize]));
        let value = match slot {
            Some(Slot::Target(index)) => {
                return Some(Truth::Var {
                    index,
                    negated: lit.negated,
                })
            }
            Some(Slot::Observed(v)) => v,
            None if lit.closed => 0.0,
            None => return None,
        };
        Some(Truth::Const(if lit.negated { 1.0 - value } else { value }))
    }

    /// Largest distance any completion of the current partial binding can reach.
    fn upper_bound(&self) -> f64 {
        let (head, body) = self.resolved.split_last().unwrap();
        let body_max: f64 = body
            .iter()
            .map(|t| match t {
                Some(Truth::Const(v)) => *v,
                _ => 1.0,
            })
            .sum();
        let head_min = match head {
            Some(Truth::Const(v)) => *v,
            _ => 0.0,
        };
        body_max - (body.len() as f64 - 1.0) - head_min
    }

    fn run(&mut self) {
        let mut newly = Vec::new();
        let mut dead = false;
        for li in 0..self.lits.len() {
            if self.resolved[li].is_some()
                || self.lits[li]
                    .args
                    .iter()
                    .any(|a| self.arg_value(*a) == UNBOUND)
            {
                continue;
            }
            match self.evaluate(li) {
                Some(t) => {
                    self.resolved[li] = Some(t);
                    newly.push(li);
                }
                None => {
                    dead = true;
                    break;
                }
            }
        }
        let clash = self
            .not_equal
            .iter()
            .any(|&(a, b)| self.bound[a] != UNBOUND && self.bound[a] == self.bound[b]);
        if !dead && !clash && self.upper_bound() > SATISFIED_EPS {
            if self.resolved.iter().all(Option::is_some) {
                self.emit();
            } else {
                self.branch();
            }
        }
        for li in newly {
            self.resolved[li] = None;
        }
    }

    fn branch(&mut self) {
        let choice = (0..self.lits.len())
            .filter(|&li| self.resolved[li].is_none() && self.lits[li].enumerable())
            .map(|li| (self.candidate_count(li), li))
            .min();
        let Some((_, li)) = choice else {
            return;
        };
        let Some(table) = self.lits[li].table else {
            return;
        };
        let rows: Vec<u32> = match self.bucket(li) {
            Some(b) => b.to_vec(),
            None => (0..table.rows.len() as u32).collect(),
        };
        let args = self.lits[li].args.clone();
        for row in rows {
            let values = &table.rows[row as usize];
            let mut newly_bound = Vec::new();
            let mut ok = true;
            for (a, &e) in args.iter().zip(values.iter()) {
                match *a {
                    Arg::Ent(c) => ok = c == e,
                    Arg::Var(v) if self.bound[v] == UNBOUND => {
                        if self.var_kinds[v].contains(self.entity_kinds[e as usize]) {
                            self.bound[v] = e;
                            newly_bound.push(v);
                        } else {
                            ok = false;
                        }
                    }
                    Arg::Var(v) => ok = self.bound[v] == e,
                }
                if !ok {
                    break;
                }
            }
            if ok {
                self.run();
            }
            for v in newly_bound {
                self.bound[v] = UNBOUND;
            }
        }
    }

    /// Smallest index bucket over the literal's bound positions, or `None`
    /// when no position is bound.
    fn bucket(&self, li: usize) -> Option<&'a [u32]> {
        let lit = &self.lits[li];
        let table = lit.table?;
        let mut best: Option<&'a [u32]> = None;
        for (pos, a) in lit.args.iter().enumerate() {
            let e = self.arg_value(*a);
            if e == UNBOUND {
                continue;
            }
            let bucket = table.by_position[pos]
                .get(&e)
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            if best.is_none_or(|b| bucket.len() < b.len()) {
                best = Some(bucket);
            }
        }
        best
    }

    fn candidate_count(&self, li: usize) -> usize {
        match self.lits[li].table {
            None => 0,
            Some(t) => self.bucket(li).map_or(t.rows.len(), <[u32]>::len),
        }
    }

    fn emit(&mut self) {
        let truths: Vec<Truth> = self.resolved.iter().map(|t| t.unwrap()).collect();
        let (head, body) = truths.split_last().unwrap();
        let (coeffs, constant) = encode_implication(body, *head);
        if coeffs.is_empty() {
            self.inactive += 1;
            return;
        }
        let rule = GroundRule {
            schema: self.schema,
            coeffs,
            constant,
            exponent: self.exponent,
            binding: String::new(),
        };
        if rule.max_linear() <= SATISFIED_EPS {
            return;
        }
        let key = (
            rule.coeffs.iter().map(|(i, c)| (*i, c.to_bits())).collect(),
            rule.constant.to_bits(),
        );
        if !self.seen.insert(key) {
            return;
        }
        let binding = self
            .var_names
            .iter()
            .zip(&self.bound)
            .map(|(n, e)| format!("{n}={}", self.entities[*e as usize].id))
            .collect::<Vec<_>>()
            .join(";");
        self.rules.push(GroundRule { binding, ..rule });
    }
}

/// Grounds every schema of `rs` over `g`. `targets` become the model's
/// variables in the given order; other labeled open atoms of `g` act as
/// observed constants and unlabeled ones are outside the universe.
pub fn ground(
    rs: &RuleSet,
    g: &KnowledgeGraph,
    targets: &[Atom],
) -> Result<GroundedModel, GroundError> {
    if targets.is_empty() {
        return Err(GroundError::EmptyTargets);
    }
    let diags = validate(rs, g);
    if !diags.is_empty() {
        return Err(GroundError::Invalid(diags));
    }
    let mut variables = Vec::new();
    let mut target_index: HashMap<Atom, usize> = HashMap::new();
    for atom in targets {
        let open = g.signature(&atom.predicate).is_some_and(|s| !s.closed);
        if !open || !g.targets().contains_key(atom) {
            return Err(GroundError::UnknownTarget(atom.to_string()));
        }
        if !target_index.contains_key(atom) {
            target_index.insert(atom.clone(), variables.len());
            variables.push(atom.clone());
        }
    }
    let gold = variables.iter().map(|a| g.targets()[a]).collect();
    let index = Index::build(g, &target_index);

    let schemas: Vec<&RuleSchema> = rs.iter().collect();
    let per_schema: Vec<Result<(Vec<GroundRule>, usize), GroundError>> = schemas
        .par_iter()
        .enumerate()
        .map(|(s, rule)| {
            let mut search = Search::new(s, rule, g, &index)?;
            search.run();
            Ok((search.rules, search.inactive))
        })
        .collect();

    let mut rules = Vec::new();
    let mut infos = Vec::new();
    for (rule, res) in schemas.iter().zip(per_schema) {
        let (mut ground_rules, inactive) = res?;
        infos.push(SchemaInfo {
            id: rule.id.clone(),
            source: rule.source,
            weight: rule.weight,
            learnable: rule.learnable,
            exponent: rule.exponent(),
            groundings: ground_rules.len(),
            inactive,
        });
        rules.append(&mut ground_rules);
    }
    Ok(GroundedModel {
        variables,
        gold,
        rules,
        schemas: infos,
    })
}

/// Printed linear forms per schema, for comparison with a brute-force grounding.
#[cfg(test)]
pub(crate) fn schema_forms(m: &GroundedModel) -> std::collections::BTreeMap<String, Vec<String>> {
    let mut out: std::collections::BTreeMap<String, Vec<String>> =
        std::collections::BTreeMap::new();
    for r in &m.rules {
        let mut terms: Vec<String> = r
            .coeffs
            .iter()
            .map(|(i, c)| format!("{c}*{}", m.variables[*i]))
            .collect();
        terms.push(format!("{}", r.constant));
        out.entry(m.schemas[r.schema].id.clone())
            .or_default()
            .push(terms.join(" + "));
    }
    for v in out.values_mut() {
        v.sort();
    }
    out
}
