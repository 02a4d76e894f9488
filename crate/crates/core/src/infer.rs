//! MAP inference by consensus ADMM over the box `[0, 1]^V`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ground::{GroundError, GroundRule, GroundedModel};

#[derive(Debug, Error)]
pub enum InferError {
    #[error("model has no variables")]
    NoVariables,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("invalid ADMM configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ground(#[from] GroundError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub rho: f64,
    pub init_value: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Solve the per-rule subproblems on the rayon pool.
    pub parallel: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            rho: 1.0,
            init_value: 0.25,
            abs_tol: 1e-6,
            rel_tol: 1e-6,
            max_iters: 25_000,
            parallel: false,
        }
    }
}

impl AdmmConfig {
    pub fn check(&self) -> Result<(), InferError> {
        let bad = |m: &str| Err(InferError::Config(m.into()));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho must be positive");
        }
        if !(0.0..=1.0).contains(&self.init_value) {
            return bad("init_value must lie in [0, 1]");
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceDiagnostics {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub converged: bool,
    pub wall_time_secs: f64,
    /// Variables with no incident rule, left at the initial value.
    pub isolated: Vec<usize>,
    /// `(iteration, objective)` samples of the consensus iterate.
    pub objective_trace: Vec<(usize, f64)>,
}

/// Consensus variables, local copies and scaled duals.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub z: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// `Σ_r w_r · d_r(y)^p_r`.
pub fn objective(m: &GroundedModel, y: &[f64]) -> Result<f64, InferError> {
    m.check_dimension(y)?;
    Ok(energy(m, y))
}

fn energy(m: &GroundedModel, y: &[f64]) -> f64 {
    m.rules
        .iter()
        .map(|r| m.rule_weight(r) * r.potential(y))
        .sum()
}

/// Minimizer of `w·max(0, c·x + c0)^p + ρ/2 ‖x − v‖²`, written into `x`.
pub fn prox(rule: &GroundRule, weight: f64, rho: f64, v: &[f64], x: &mut [f64]) {
    x.copy_from_slice(v);
    let lin = rule.constant
        + rule
            .coeffs
            .iter()
            .zip(v)
            .map(|((_, c), vi)| c * vi)
            .sum::<f64>();
    if lin <= 0.0 || weight == 0.0 {
        return;
    }
    let norm2: f64 = rule.coeffs.iter().map(|(_, c)| c * c).sum();
    if norm2 == 0.0 {
        return;
    }
    let step = if rule.exponent == 2 {
        2.0 * weight * lin / (rho + 2.0 * weight * norm2)
    } else {
        let full = weight / rho;
        // stepping the whole gradient would cross the hinge: stop on it
        if lin - full * norm2 >= 0.0 {
            full
        } else {
            lin / norm2
        }
    };
    for ((_, c), xi) in rule.coeffs.iter().zip(x.iter_mut()) {
        *xi -= step * c;
    }
}

fn check_model(m: &GroundedModel) -> Result<(), InferError> {
    if m.num_variables() == 0 {
        return Err(InferError::NoVariables);
    }
    for s in &m.schemas {
        if !s.weight.is_finite() || s.weight < 0.0 {
            return Err(InferError::NonFinite(format!(
                "weight {} on `{}`",
                s.weight, s.id
            )));
        }
    }
    for r in &m.rules {
        if !r.constant.is_finite() || r.coeffs.iter().any(|(_, c)| !c.is_finite()) {
            return Err(InferError::NonFinite(format!(
                "coefficient in a `{}` ground rule",
                m.schemas[r.schema].id
            )));
        }
    }
    Ok(())
}

const TRACE_EVERY: usize = 50;

pub fn map_inference(
    m: &GroundedModel,
    cfg: &AdmmConfig,
) -> Result<(Vec<f64>, InferenceDiagnostics), InferError> {
    cfg.check()?;
    check_model(m)?;
    let start = Instant::now();
    let n = m.num_variables();
    let weights: Vec<f64> = m.rules.iter().map(|r| m.rule_weight(r)).collect();
    let mut degree = vec![0usize; n];
    for r in &m.rules {
        for (i, _) in &r.coeffs {
            degree[*i] += 1;
        }
    }
    let copies: usize = degree.iter().sum();
    let isolated: Vec<usize> = (0..n).filter(|i| degree[*i] == 0).collect();

    let mut st = AdmmState {
        z: vec![cfg.init_value; n],
        x: m.rules
            .iter()
            .map(|r| vec![cfg.init_value; r.coeffs.len()])
            .collect(),
        u: m.rules.iter().map(|r| vec![0.0; r.coeffs.len()]).collect(),
        iterations: 0,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
    };
    let mut trace = vec![(0, energy(m, &st.z))];
    let mut converged = copies == 0;
    let mut sums = vec![0.0; n];
    let sqrt_copies = (copies as f64).sqrt();

    while !converged && st.iterations < cfg.max_iters {
        st.iterations += 1;
        let local = |((rule, w), (x, u)): ((&GroundRule, &f64), (&mut Vec<f64>, &Vec<f64>))| {
            let v: Vec<f64> = rule
                .coeffs
                .iter()
                .zip(u)
                .map(|((i, _), ui)| st.z[*i] - ui)
                .collect();
            prox(rule, *w, cfg.rho, &v, x);
        };
        if cfg.parallel {
            m.rules
                .par_iter()
                .zip(weights.par_iter())
                .zip(st.x.par_iter_mut().zip(st.u.par_iter()))
                .for_each(local);
        } else {
            m.rules
                .iter()
                .zip(weights.iter())
                .zip(st.x.iter_mut().zip(st.u.iter()))
                .for_each(local);
        }

        sums.iter_mut().for_each(|s| *s = 0.0);
        for ((rule, x), u) in m.rules.iter().zip(&st.x).zip(&st.u) {
            for (((i, _), xi), ui) in rule.coeffs.iter().zip(x).zip(u) {
                sums[*i] += xi + ui;
            }
        }
        let mut dz2 = 0.0;
        let mut z_norm2 = 0.0;
        for i in 0..n {
            if degree[i] == 0 {
                continue;
            }
            let z = (sums[i] / degree[i] as f64).clamp(0.0, 1.0);
            dz2 += degree[i] as f64 * (z - st.z[i]).powi(2);
            z_norm2 += degree[i] as f64 * z * z;
            st.z[i] = z;
        }

        let mut r2 = 0.0;
        let mut x_norm2 = 0.0;
        let mut u_norm2 = 0.0;
        for ((rule, x), u) in m.rules.iter().zip(&st.x).zip(st.u.iter_mut()) {
            for (((i, _), xi), ui) in rule.coeffs.iter().zip(x).zip(u.iter_mut()) {
                let r = xi - st.z[*i];
                *ui += r;
                r2 += r * r;
                x_norm2 += xi * xi;
                u_norm2 += *ui * *ui;
            }
        }
        st.primal_residual = r2.sqrt();
        st.dual_residual = cfg.rho * dz2.sqrt();
        let eps_pri = sqrt_copies * cfg.abs_tol + cfg.rel_tol * x_norm2.sqrt().max(z_norm2.sqrt());
        let eps_dual = sqrt_copies * cfg.abs_tol + cfg.rel_tol * cfg.rho * u_norm2.sqrt();
        converged = st.primal_residual <= eps_pri && st.dual_residual <= eps_dual;
        if st.iterations.is_multiple_of(TRACE_EVERY) || converged {
            trace.push((st.iterations, energy(m, &st.z)));
        }
    }
    if !converged {
        log::warn!(
            "ADMM stopped at the iteration cap ({}) without converging",
            cfg.max_iters
        );
        if trace.last().map(|t| t.0) != Some(st.iterations) {
            trace.push((st.iterations, energy(m, &st.z)));
        }
    }
    let diag = InferenceDiagnostics {
        iterations: st.iterations,
        primal_residual: if copies == 0 { 0.0 } else { st.primal_residual },
        dual_residual: if copies == 0 { 0.0 } else { st.dual_residual },
        objective: energy(m, &st.z),
        converged,
        wall_time_secs: start.elapsed().as_secs_f64(),
        isolated,
        objective_trace: trace,
    };
    Ok((st.z, diag))
}
