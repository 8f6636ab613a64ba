//! Stochastic reconfiguration and the plain-gradient baseline.
//!
//! One step samples the current machine (or enumerates it exactly), reduces
//! the samples to the cost and the system `(S, f)`, and shifts every
//! parameter by `γ`. SR solves `(S + λI) γ = η f`, which makes the step track
//! `ρ → ρ + η L ρ` inside the variational manifold, i.e. forward relaxation
//! towards the stationary state.

use std::io::Write;
use std::time::Instant;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ansatz::LdmParameters;
use crate::error::{Error, Result};
use crate::estimators::{batch_quantities, estimate_cost, exact_estimates, fisher_and_forces, CostEstimate, SrSystem};
use crate::lattice::{ModelSpec, SpinConfiguration};
use crate::sampler::{derive_seed, run_chains, ChainConfig, ChainKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrConfig {
    pub eta: f64,
    pub lambda: f64,
    pub max_steps: usize,
    #[serde(default = "default_stop_cost")]
    pub stop_cost: f64,
    #[serde(default = "default_stop_var")]
    pub stop_var: f64,
}

fn default_stop_cost() -> f64 {
    1e-4
}

fn default_stop_var() -> f64 {
    1e-2
}

impl SrConfig {
    pub fn new(eta: f64, lambda: f64, max_steps: usize) -> Self {
        Self {
            eta,
            lambda,
            max_steps,
            stop_cost: default_stop_cost(),
            stop_var: default_stop_var(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Domain(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Domain(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.stop_cost.is_nan() || self.stop_var.is_nan() {
            return Err(Error::Domain("stop thresholds must not be NaN".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    #[default]
    Sr,
    Sga,
}

/// How each step estimates the cost and the SR system.
#[derive(Clone, Debug, PartialEq)]
pub enum Estimation {
    /// Markov chains over `|ρ|²`; chains persist from one step to the next.
    Sampled(ChainConfig),
    /// Full enumeration, limited to small chains.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub cost_abs_sq: f64,
    pub cost_variance: f64,
    /// `‖γ‖₂`; zero on the step that meets the stopping condition.
    pub update_norm: f64,
    /// `None` under exact estimation.
    pub acceptance: Option<f64>,
    pub flagged: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<StepRecord>,
    pub converged: bool,
}

impl OptimizationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn total_wall_time(&self) -> f64 {
        self.records.iter().map(|r| r.wall_time_s).sum()
    }

    /// CSV with columns `step,cost_abs_sq,cost_variance,update_norm,acceptance`.
    /// Wall time is left out so that the file is reproducible.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,cost_abs_sq,cost_variance,update_norm,acceptance")?;
        for r in &self.records {
            let acc = r.acceptance.map(|a| format!("{a:e}")).unwrap_or_default();
            writeln!(
                out,
                "{},{:e},{:e},{:e},{}",
                r.step, r.cost_abs_sq, r.cost_variance, r.update_norm, acc
            )?;
        }
        Ok(())
    }
}

fn check_system(system: &SrSystem) -> Result<()> {
    let p = system.dim();
    if system.s.nrows() != p || system.s.ncols() != p {
        return Err(Error::Domain(format!(
            "S is {}×{} but f has {p} entries",
            system.s.nrows(),
            system.s.ncols()
        )));
    }
    Ok(())
}

/// Ratio of extreme eigenvalues of a Hermitian matrix; infinite when singular.
fn condition_number(a: &Mat<Complex64>) -> f64 {
    match a.self_adjoint_eigenvalues(Side::Lower) {
        Ok(ev) if !ev.is_empty() => {
            let max = ev.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let min = ev.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
            if min > 0.0 {
                max / min
            } else {
                f64::INFINITY
            }
        }
        _ => f64::NAN,
    }
}

/// Solves `(S + λI) γ = η f`.
pub fn sr_update(system: &SrSystem, cfg: &SrConfig) -> Result<Vec<Complex64>> {
    check_system(system)?;
    let p = system.dim();
    if p == 0 {
        return Ok(Vec::new());
    }
    let a = Mat::<Complex64>::from_fn(p, p, |i, j| {
        if i == j {
            system.s[(i, j)] + cfg.lambda
        } else {
            system.s[(i, j)]
        }
    });
    let rhs = Mat::<Complex64>::from_fn(p, 1, |i, _| system.f[i] * cfg.eta);
    let gamma = match a.llt(Side::Lower) {
        Ok(llt) => llt.solve(&rhs),
        Err(_) => {
            log::debug!("S + λI not positive definite; falling back to LU");
            a.partial_piv_lu().solve(&rhs)
        }
    };
    let gamma: Vec<Complex64> = (0..p).map(|i| gamma[(i, 0)]).collect();
    if gamma.iter().all(|g| g.is_finite()) {
        Ok(gamma)
    } else {
        Err(Error::Solve {
            reason: "non-finite update".into(),
            condition: condition_number(&a),
        })
    }
}

/// `γ = η f`.
pub fn sga_update(system: &SrSystem, cfg: &SrConfig) -> Vec<Complex64> {
    system.f.iter().map(|f| f * cfg.eta).collect()
}

struct Estimate {
    cost: CostEstimate,
    system: SrSystem,
    acceptance: Option<f64>,
    flagged: usize,
}

fn sampled_estimate(
    params: &LdmParameters,
    model: &ModelSpec,
    chains: &ChainConfig,
    starts: Option<&[SpinConfiguration]>,
) -> Result<(Estimate, Vec<SpinConfiguration>)> {
    let batch = run_chains(params, model, chains, ChainKind::Full, starts)?;
    let q = batch_quantities(params, model, &batch)?;
    let cost = estimate_cost(&q.c_loc)?;
    let system = fisher_and_forces(&q.o, &q.c_loc)?;
    let ends = batch
        .split_by_chain(&batch.configs)
        .into_iter()
        .filter_map(|c| c.last().cloned())
        .collect();
    Ok((
        Estimate {
            cost,
            system,
            acceptance: Some(batch.acceptance_rate()),
            flagged: q.flagged,
        },
        ends,
    ))
}

/// [`run_optimization_with`] without an observer.
pub fn run_optimization(
    model: &ModelSpec,
    params0: &LdmParameters,
    estimation: &Estimation,
    cfg: &SrConfig,
    rule: UpdateRule,
) -> Result<(LdmParameters, OptimizationTrace)> {
    run_optimization_with(model, params0, estimation, cfg, rule, |_, _| Ok(()))
}

/// Iterates `estimate → update` until `|C|² < stop_cost` and the cost
/// variance `< stop_var`, or for `max_steps` steps.
///
/// Step `k` of a sampled run uses seed `derive_seed(seed, k)`; the first step
/// honours `warm_start`, later steps continue from the previous chain ends.
/// `observer` sees every record together with the parameters after it.
pub fn run_optimization_with<F>(
    model: &ModelSpec,
    params0: &LdmParameters,
    estimation: &Estimation,
    cfg: &SrConfig,
    rule: UpdateRule,
    mut observer: F,
) -> Result<(LdmParameters, OptimizationTrace)>
where
    F: FnMut(&StepRecord, &LdmParameters) -> Result<()>,
{
    model.validate()?;
    cfg.validate()?;
    if params0.n_visible() != model.n_sites {
        return Err(Error::Domain(format!(
            "machine has {} visible units but the model has {} sites",
            params0.n_visible(),
            model.n_sites
        )));
    }
    if let Estimation::Sampled(chains) = estimation {
        chains.validate()?;
        if chains.n_samples < 2 {
            return Err(Error::Domain("training needs at least two samples per chain".into()));
        }
    }

    let mut params = params0.clone();
    let mut trace = OptimizationTrace::default();
    let mut starts: Option<Vec<SpinConfiguration>> = None;

    for step in 0..cfg.max_steps {
        let clock = Instant::now();
        let est = match estimation {
            Estimation::Exact => {
                let (cost, system) = exact_estimates(&params, model)?;
                Estimate {
                    cost,
                    system,
                    acceptance: None,
                    flagged: 0,
                }
            }
            Estimation::Sampled(chains) => {
                let mut step_cfg = chains.reseeded(derive_seed(chains.seed, step as u64));
                if starts.is_some() {
                    step_cfg.warm_start = false;
                }
                let (est, ends) = sampled_estimate(&params, model, &step_cfg, starts.as_deref())?;
                starts = Some(ends);
                est
            }
        };

        let converged = est.cost.abs_sq < cfg.stop_cost && est.cost.variance < cfg.stop_var;
        let update_norm = if converged {
            0.0
        } else {
            let gamma = match rule {
                UpdateRule::Sr => sr_update(&est.system, cfg)?,
                UpdateRule::Sga => sga_update(&est.system, cfg),
            };
            params = params.shifted(&gamma)?;
            gamma.iter().map(|g| g.norm_sqr()).sum::<f64>().sqrt()
        };

        let record = StepRecord {
            step,
            cost_abs_sq: est.cost.abs_sq,
            cost_variance: est.cost.variance,
            update_norm,
            acceptance: est.acceptance,
            flagged: est.flagged,
            wall_time_s: clock.elapsed().as_secs_f64(),
        };
        log::debug!(
            "step {step}: |C|² = {:e}, var = {:e}, |γ| = {:e}",
            record.cost_abs_sq,
            record.cost_variance,
            record.update_norm
        );
        observer(&record, &params)?;
        trace.records.push(record);
        if converged {
            trace.converged = true;
            break;
        }
    }
    Ok((params, trace))
}
