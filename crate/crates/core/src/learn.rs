//! Weight initialization and voted-perceptron learning on the
//! pseudo-log-likelihood.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ground::{GroundError, GroundedModel};
use crate::rules::Source;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("model has no ground rules")]
    NoGroundings,
    #[error("non-finite energy at variable {0}")]
    NonFinite(usize),
    #[error("invalid learning configuration: {0}")]
    Config(String),
    #[error("gold value missing for target {0}")]
    MissingGold(String),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub iterations: usize,
    pub step: f64,
    /// Odd number of uniform Simpson nodes on `[0, 1]`.
    pub quadrature: usize,
    pub parallel: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            iterations: 10,
            step: 1.0,
            quadrature: 151,
            parallel: false,
        }
    }
}

impl LearnConfig {
    pub fn check(&self) -> Result<(), LearnError> {
        if self.iterations == 0 {
            return Err(LearnError::Config("iterations must be at least 1".into()));
        }
        if !(self.step >= 0.0 && self.step.is_finite()) {
            return Err(LearnError::Config(
                "step must be a finite non-negative number".into(),
            ));
        }
        check_quadrature(self.quadrature)
    }
}

fn check_quadrature(q: usize) -> Result<(), LearnError> {
    if q < 3 || q.is_multiple_of(2) {
        return Err(LearnError::Config(format!(
            "quadrature needs an odd number of points >= 3, got {q}"
        )));
    }
    Ok(())
}

/// Equal mass per source, split equally among the source's grounded
/// schemas and then over each schema's groundings. Priors count as their
/// own source. Schemas with fixed weights keep them.
pub fn init_weights(m: &GroundedModel, mass: f64) -> Result<Vec<f64>, LearnError> {
    if m.rules.is_empty() {
        return Err(LearnError::NoGroundings);
    }
    let mut per_source: BTreeMap<Source, usize> = BTreeMap::new();
    for s in m.schemas.iter().filter(|s| s.learnable && s.groundings > 0) {
        *per_source.entry(s.source).or_default() += 1;
    }
    Ok(m.schemas
        .iter()
        .map(|s| {
            if !s.learnable {
                s.weight
            } else if s.groundings == 0 {
                0.0
            } else {
                mass / (per_source[&s.source] as f64 * s.groundings as f64)
            }
        })
        .collect())
}

fn simpson_weights(q: usize) -> Vec<f64> {
    let h = 1.0 / (q - 1) as f64;
    (0..q)
        .map(|k| {
            let c = if k == 0 || k == q - 1 {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

/// Rules touching one variable, with the linear form split into the part
/// that does not depend on it.
struct Neighbourhood {
    /// `(schema, weight, coefficient on the variable, rest of the linear form, exponent)`
    terms: Vec<(usize, f64, f64, f64, u8)>,
}

impl Neighbourhood {
    fn energy(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(_, w, c, rest, p)| w * hinge(rest + c * t, p))
            .sum()
    }
}

fn hinge(lin: f64, p: u8) -> f64 {
    let d = lin.max(0.0);
    if p == 2 {
        d * d
    } else {
        d
    }
}

fn neighbourhoods(m: &GroundedModel, y: &[f64]) -> Vec<Neighbourhood> {
    let mut out: Vec<Neighbourhood> = (0..m.num_variables())
        .map(|_| Neighbourhood { terms: Vec::new() })
        .collect();
    for r in &m.rules {
        let w = m.rule_weight(r);
        let lin = r.linear(y);
        for &(i, c) in &r.coeffs {
            out[i]
                .terms
                .push((r.schema, w, c, lin - c * y[i], r.exponent));
        }
    }
    out
}

/// Conditional law of one variable on the Simpson grid.
struct Conditional {
    /// Normalized density times quadrature weight at each node.
    mass: Vec<f64>,
    log_z: f64,
}

fn conditional(nb: &Neighbourhood, nodes: &[f64], weights: &[f64]) -> Option<Conditional> {
    let energies: Vec<f64> = nodes.iter().map(|t| nb.energy(*t)).collect();
    let shift = energies.iter().copied().fold(f64::INFINITY, f64::min);
    if !shift.is_finite() {
        return None;
    }
    let mut mass: Vec<f64> = energies
        .iter()
        .zip(weights)
        .map(|(e, w)| w * (-(e - shift)).exp())
        .collect();
    let z: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= z);
    Some(Conditional {
        mass,
        log_z: z.ln() - shift,
    })
}

fn grid(q: usize) -> (Vec<f64>, Vec<f64>) {
    let nodes = (0..q).map(|k| k as f64 / (q - 1) as f64).collect();
    (nodes, simpson_weights(q))
}

fn gold_vector(m: &GroundedModel, y_obs: &[f64]) -> Result<(), LearnError> {
    m.check_dimension(y_obs)?;
    Ok(())
}

/// `Σ_i log p(y_i | y_−i)` with each conditional a density on `[0, 1]`.
pub fn pseudo_log_likelihood(
    m: &GroundedModel,
    y_obs: &[f64],
    q: usize,
) -> Result<f64, LearnError> {
    gold_vector(m, y_obs)?;
    check_quadrature(q)?;
    let (nodes, weights) = grid(q);
    let mut total = 0.0;
    for (i, nb) in neighbourhoods(m, y_obs).iter().enumerate() {
        if nb.terms.is_empty() {
            continue;
        }
        let c = conditional(nb, &nodes, &weights).ok_or(LearnError::NonFinite(i))?;
        let ll = -nb.energy(y_obs[i]) - c.log_z;
        if !ll.is_finite() {
            return Err(LearnError::NonFinite(i));
        }
        total += ll;
    }
    Ok(total)
}

/// For each rule touching variable `i`, in rule order, the conditional
/// expectation of `d^p` with the other variables held at `y`.
pub fn expected_potentials(
    m: &GroundedModel,
    y: &[f64],
    i: usize,
    q: usize,
) -> Result<Vec<f64>, LearnError> {
    gold_vector(m, y)?;
    check_quadrature(q)?;
    let (nodes, weights) = grid(q);
    let nb = &neighbourhoods(m, y)[i];
    let c = conditional(nb, &nodes, &weights).ok_or(LearnError::NonFinite(i))?;
    Ok(nb
        .terms
        .iter()
        .map(|&(_, _, coef, rest, p)| {
            nodes
                .iter()
                .zip(&c.mass)
                .map(|(t, w)| w * hinge(rest + coef * t, p))
                .sum()
        })
        .collect())
}

/// Per-schema `∂ PLL / ∂ w_s`.
pub fn pll_gradient(
    m: &GroundedModel,
    y_obs: &[f64],
    q: usize,
    parallel: bool,
) -> Result<Vec<f64>, LearnError> {
    gold_vector(m, y_obs)?;
    check_quadrature(q)?;
    let (nodes, weights) = grid(q);
    let nbs = neighbourhoods(m, y_obs);
    let per_var = |(i, nb): (usize, &Neighbourhood)| -> Result<Vec<(usize, f64)>, LearnError> {
        if nb.terms.is_empty() {
            return Ok(Vec::new());
        }
        let c = conditional(nb, &nodes, &weights).ok_or(LearnError::NonFinite(i))?;
        Ok(nb
            .terms
            .iter()
            .map(|&(s, _, coef, rest, p)| {
                let expected: f64 = nodes
                    .iter()
                    .zip(&c.mass)
                    .map(|(t, w)| w * hinge(rest + coef * t, p))
                    .sum();
                (s, expected - hinge(rest + coef * y_obs[i], p))
            })
            .collect())
    };
    let parts: Vec<Result<Vec<(usize, f64)>, LearnError>> = if parallel {
        nbs.par_iter().enumerate().map(per_var).collect()
    } else {
        nbs.iter().enumerate().map(per_var).collect()
    };
    let mut grad = vec![0.0; m.schemas.len()];
    for part in parts {
        for (s, g) in part? {
            grad[s] += g;
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub rule: String,
    pub groundings: usize,
    pub initial: f64,
    pub learned: f64,
    /// `learned / initial`, undefined when the initial weight is 0.
    pub relative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub entries: Vec<WeightEntry>,
    /// Weight vector after each epoch.
    pub epochs: Vec<Vec<f64>>,
}

impl WeightReport {
    pub fn learned(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.learned).collect()
    }

    pub fn get(&self, rule: &str) -> Option<&WeightEntry> {
        self.entries.iter().find(|e| e.rule == rule)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<(), LearnError> {
        writeln!(
            w,
            "rule\trelative_weight\tgroundings\tinitial_weight\tlearned_weight"
        )?;
        for e in &self.entries {
            let rel = e.relative.map_or("-".to_string(), |r| format!("{r:.4}"));
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                e.rule, rel, e.groundings, e.initial, e.learned
            )?;
        }
        Ok(())
    }
}

/// Reads the `rule` and `learned_weight` columns of a weight report.
pub fn read_weights_tsv<R: std::io::BufRead>(r: R) -> Result<BTreeMap<String, f64>, LearnError> {
    let mut out = BTreeMap::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if idx == 0 && line.starts_with("rule\t") || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let weight = match fields.as_slice() {
            [rule, _, _, _, learned] => {
                learned.trim().parse::<f64>().ok().map(|w| (rule.trim(), w))
            }
            _ => None,
        };
        match weight {
            Some((rule, w)) if w >= 0.0 && w.is_finite() => {
                out.insert(rule.to_string(), w);
            }
            _ => {
                return Err(LearnError::Config(format!(
                    "weights line {}: expected 5 tab-separated fields with a non-negative learned weight",
                    idx + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Voted perceptron: ascend the PLL for `iterations` epochs with per-schema
/// steps scaled by grounding count, then average the epoch weight vectors.
/// Starts from the model's current weights.
pub fn learn_weights(
    m: &GroundedModel,
    y_obs: &[f64],
    cfg: &LearnConfig,
) -> Result<WeightReport, LearnError> {
    cfg.check()?;
    gold_vector(m, y_obs)?;
    let initial = m.weights();
    let mut work = m.clone();
    let mut epochs = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let grad = pll_gradient(&work, y_obs, cfg.quadrature, cfg.parallel)?;
        let mut w = work.weights();
        for (s, info) in work.schemas.iter().enumerate() {
            if info.learnable && info.groundings > 0 {
                w[s] = (w[s] + cfg.step * grad[s] / info.groundings as f64).max(0.0);
            }
        }
        work.set_weights(&w);
        epochs.push(w);
    }
    // running mean, exact when every epoch agrees
    let mut averaged = epochs[0].clone();
    for (k, w) in epochs.iter().enumerate().skip(1) {
        for (a, x) in averaged.iter_mut().zip(w) {
            *a += (x - *a) / (k + 1) as f64;
        }
    }
    let entries = m
        .schemas
        .iter()
        .zip(initial.iter().zip(&averaged))
        .map(|(info, (&init, &learned))| WeightEntry {
            rule: info.id.clone(),
            groundings: info.groundings,
            initial: init,
            learned,
            relative: (init > 0.0).then(|| learned / init),
        })
        .collect();
    Ok(WeightReport { entries, epochs })
}

/// Gold values of every model variable; errors on unknown gold.
pub fn gold_assignment(m: &GroundedModel) -> Result<Vec<f64>, LearnError> {
    m.gold
        .iter()
        .zip(&m.variables)
        .map(|(g, a)| g.ok_or_else(|| LearnError::MissingGold(a.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground::{GroundRule, SchemaInfo};
    use crate::kg::Atom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schema(id: &str, source: Source, groundings: usize, weight: f64) -> SchemaInfo {
        SchemaInfo {
            id: id.into(),
            source,
            weight,
            learnable: true,
            exponent: 2,
            groundings,
            inactive: 0,
        }
    }

    fn rule(schema: usize, coeffs: Vec<(usize, f64)>, constant: f64) -> GroundRule {
        GroundRule {
            schema,
            coeffs,
            constant,
            exponent: 2,
            binding: String::new(),
        }
    }

    fn model(n: usize, rules: Vec<GroundRule>, schemas: Vec<SchemaInfo>) -> GroundedModel {
        GroundedModel {
            variables: (0..n)
                .map(|i| Atom::treats(&format!("d{i}"), "x").unwrap())
                .collect(),
            gold: vec![None; n],
            rules,
            schemas,
        }
    }

    fn counted(n: usize, schemas: Vec<SchemaInfo>) -> GroundedModel {
        // one dummy rule per grounding so the model is non-empty
        let rules = schemas
            .iter()
            .enumerate()
            .flat_map(|(s, info)| (0..info.groundings).map(move |_| rule(s, vec![(0, 1.0)], 0.0)))
            .collect();
        model(n, rules, schemas)
    }

    #[test]
    fn equal_contribution_initialization() {
        let m = counted(
            1,
            vec![
                schema("a1", Source::Ontologies, 10, 1.0),
                schema("a2", Source::Ontologies, 30, 1.0),
                schema("b1", Source::Narratives, 20, 1.0),
                schema("empty", Source::Narratives, 0, 1.0),
            ],
        );
        let w = init_weights(&m, 1.0).unwrap();
        assert!((w[0] - 0.05).abs() < 1e-12);
        assert!((w[1] - 0.5 / 30.0).abs() < 1e-12);
        assert!((w[2] - 0.05).abs() < 1e-12);
        assert_eq!(w[3], 0.0);
    }

    #[test]
    fn single_schema_gets_inverse_count() {
        let m = counted(1, vec![schema("a", Source::Crf, 7, 1.0)]);
        assert!((init_weights(&m, 1.0).unwrap()[0] - 1.0 / 7.0).abs() < 1e-15);
        let empty = model(1, vec![], vec![schema("a", Source::Crf, 0, 1.0)]);
        assert!(init_weights(&empty, 1.0).is_err());
    }

    #[test]
    fn isolated_variable_contributes_nothing() {
        let m = model(1, vec![], vec![]);
        assert_eq!(pseudo_log_likelihood(&m, &[0.3], 151).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_type_integral() {
        // ∫₀¹ e^{−t²} dt, by a fine midpoint rule
        let n = 200_000;
        let integral: f64 = (0..n)
            .map(|k| {
                let t = (k as f64 + 0.5) / n as f64;
                (-t * t).exp() / n as f64
            })
            .sum();
        assert!((integral - 0.746824132812427).abs() < 1e-9);
        let m = model(
            1,
            vec![rule(0, vec![(0, 1.0)], 0.0)],
            vec![schema("neg", Source::Prior, 1, 1.0)],
        );
        let pll = pseudo_log_likelihood(&m, &[0.0], 151).unwrap();
        assert!((pll + integral.ln()).abs() < 1e-8);
    }

    #[test]
    fn doubling_weights_hurts_violated_gold() {
        let m = model(
            1,
            vec![rule(0, vec![(0, -1.0)], 1.0)],
            vec![schema("pos", Source::Prior, 1, 1.0)],
        );
        let a = pseudo_log_likelihood(&m, &[0.0], 151).unwrap();
        let mut m2 = m.clone();
        m2.set_weights(&[2.0]);
        let b = pseudo_log_likelihood(&m2, &[0.0], 151).unwrap();
        assert!(b < a);
        // gold at the mode: doubling helps
        let c = pseudo_log_likelihood(&m, &[1.0], 151).unwrap();
        let d = pseudo_log_likelihood(&m2, &[1.0], 151).unwrap();
        assert!(d > c && d < 0.0 + 1.0);
    }

    fn fixture() -> (GroundedModel, Vec<f64>) {
        let m = model(
            3,
            vec![
                rule(0, vec![(0, -1.0)], 1.0),
                rule(0, vec![(1, -1.0)], 1.0),
                rule(1, vec![(0, 1.0)], 0.0),
                rule(1, vec![(1, 1.0)], 0.0),
                rule(1, vec![(2, 1.0)], 0.0),
                rule(2, vec![(0, 1.0), (2, -1.0)], 0.0),
            ],
            vec![
                schema("3a", Source::Ontologies, 2, 0.5),
                schema("prior_neg", Source::Prior, 3, 0.4),
                schema("link", Source::Ontologies, 1, 0.3),
            ],
        );
        (m, vec![1.0, 1.0, 0.0])
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (m, y) = fixture();
        let g = pll_gradient(&m, &y, 301, false).unwrap();
        let h = 1e-5;
        for s in 0..m.schemas.len() {
            let mut plus = m.clone();
            let mut minus = m.clone();
            let mut w = m.weights();
            w[s] += h;
            plus.set_weights(&w);
            w[s] -= 2.0 * h;
            minus.set_weights(&w);
            let fd = (pseudo_log_likelihood(&plus, &y, 301).unwrap()
                - pseudo_log_likelihood(&minus, &y, 301).unwrap())
                / (2.0 * h);
            assert!((fd - g[s]).abs() < 1e-6, "schema {s}: fd {fd} vs {}", g[s]);
        }
    }

    #[test]
    fn quadrature_converges() {
        let (m, y) = fixture();
        let a = pll_gradient(&m, &y, 151, false).unwrap();
        let b = pll_gradient(&m, &y, 301, false).unwrap();
        for (x, z) in a.iter().zip(&b) {
            assert!((x - z).abs() < 1e-4);
        }
    }

    #[test]
    fn expectation_matches_monte_carlo() {
        let (m, y) = fixture();
        for i in 0..3 {
            let q = expected_potentials(&m, &y, i, 151).unwrap();
            let nb = &neighbourhoods(&m, &y)[i];
            let e_min = (0..=1000)
                .map(|k| nb.energy(k as f64 / 1000.0))
                .fold(f64::INFINITY, f64::min);
            let mut rng = ChaCha8Rng::seed_from_u64(7 + i as u64);
            let mut sums = vec![0.0; q.len()];
            let mut accepted = 0usize;
            while accepted < 1_000_000 {
                let t: f64 = rng.gen();
                if rng.gen::<f64>() < (-(nb.energy(t) - e_min)).exp() {
                    accepted += 1;
                    for (s, &(_, _, c, rest, p)) in sums.iter_mut().zip(&nb.terms) {
                        *s += hinge(rest + c * t, p);
                    }
                }
            }
            for (s, e) in sums.iter().zip(&q) {
                let mc = s / accepted as f64;
                assert!((mc - e).abs() < 1e-3, "var {i}: mc {mc} quad {e}");
            }
        }
    }

    #[test]
    fn zero_step_is_a_no_op() {
        let (m, y) = fixture();
        let cfg = LearnConfig {
            step: 0.0,
            ..Default::default()
        };
        let r = learn_weights(&m, &y, &cfg).unwrap();
        assert_eq!(r.learned(), m.weights());
    }

    #[test]
    fn agreeing_rules_gain_weight() {
        let (m, y) = fixture();
        let r = learn_weights(&m, &y, &LearnConfig::default()).unwrap();
        assert!(r.get("3a").unwrap().relative.unwrap() > 1.0);
        assert!(r.get("prior_neg").unwrap().relative.unwrap() < 1.0);
        for epoch in &r.epochs {
            assert!(epoch.iter().all(|w| *w >= 0.0));
        }
        assert_eq!(r, learn_weights(&m, &y, &LearnConfig::default()).unwrap());
    }

    #[test]
    fn symmetric_potentials_get_equal_gradients() {
        // (1 − y)² and y² around gold 0.5: both schemas see the same data
        let m = model(
            1,
            vec![rule(0, vec![(0, -1.0)], 1.0), rule(1, vec![(0, 1.0)], 0.0)],
            vec![
                schema("pos", Source::Prior, 1, 1.0),
                schema("neg", Source::Prior, 1, 1.0),
            ],
        );
        let g = pll_gradient(&m, &[0.5], 151, false).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-12);
        let r = learn_weights(&m, &[0.5], &LearnConfig::default()).unwrap();
        assert!((r.learned()[0] - r.learned()[1]).abs() < 1e-12);
    }

    #[test]
    fn report_marks_undefined_relative_weight() {
        let r = WeightReport {
            entries: vec![WeightEntry {
                rule: "2a_has_course".into(),
                groundings: 0,
                initial: 0.0,
                learned: 0.0,
                relative: None,
            }],
            epochs: vec![],
        };
        let mut buf = Vec::new();
        r.write_tsv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .contains("2a_has_course\t-\t0"));
    }

    #[test]
    fn weight_tsv_round_trip() {
        let (m, y) = fixture();
        let r = learn_weights(&m, &y, &LearnConfig::default()).unwrap();
        let mut buf = Vec::new();
        r.write_tsv(&mut buf).unwrap();
        let back = read_weights_tsv(&buf[..]).unwrap();
        for e in &r.entries {
            assert_eq!(back[&e.rule], e.learned);
        }
        assert!(read_weights_tsv("rule\tx\n3a\t-\t1\t0.5\t-2\n".as_bytes()).is_err());
    }

    #[test]
    fn config_is_checked() {
        let bad = LearnConfig {
            quadrature: 150,
            ..Default::default()
        };
        assert!(bad.check().is_err());
    }
}
