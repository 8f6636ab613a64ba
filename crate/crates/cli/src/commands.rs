//! The four jobs behind the `ldm` subcommands. Each writes its files into an
//! output directory and returns what it wrote.
//!
//! Every file except `timing.json` is a pure function of the configuration
//! and its seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ldm_core::estimators::{
    batch_quantities, estimate_cost, estimate_observable, exact_estimates, ENUMERATION_SITE_LIMIT,
};
use ldm_core::optimizer::run_optimization_with;
use ldm_core::oracle::{
    contiguous_bipartitions, expectation, negativity, physicality_metrics, purity, reconstruct_density,
    steady_state_ed, PhysicalityMetrics, RECONSTRUCT_SITE_LIMIT,
};
use ldm_core::sampler::{derive_seed, gelman_rubin, run_chain, run_diagonal_chain};
use ldm_core::{init_params, parameter_count, Estimation, LdmParameters, Observable, OptimizationTrace, SampleBatch};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{central_site, EstimationMode, RunConfig};
use crate::error::CliError;

/// Streams derived from the run seed, one per consumer.
const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const DIAGONAL_STREAM: u64 = 2;
const DIAGNOSTIC_STREAM: u64 = 3;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(CliError::io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(ldm_core::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    let file = File::create(path).map_err(CliError::io(path))?;
    Ok(csv::Writer::from_writer(file))
}

/// Shortest representation that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn load_checkpoint(path: &Path) -> Result<LdmParameters, CliError> {
    LdmParameters::load(path).map_err(|e| match e {
        ldm_core::Error::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Config(format!("{}: {other}", path.display())),
    })
}

fn check_machine(cfg: &RunConfig, params: &LdmParameters) -> Result<(), CliError> {
    let (n, m) = (cfg.model.n_sites, cfg.n_hidden());
    if params.n_visible() != n || params.n_hidden() != m {
        return Err(CliError::Config(format!(
            "checkpoint has N={}, M={} but the configuration expects N={n}, M={m}",
            params.n_visible(),
            params.n_hidden()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub n_sites: usize,
    pub n_hidden: usize,
    pub n_parameters: usize,
    pub steps: usize,
    pub converged: bool,
    /// Last sampled (or enumerated) `|C|²`; absent when no step ran.
    pub final_cost_abs_sq: Option<f64>,
    pub final_cost_variance: Option<f64>,
    /// `|C|²` of the final parameters by full enumeration, when `N ≤ 6`.
    pub exact_cost_abs_sq: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct Timing {
    wall_time_s: f64,
    mean_step_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhysicalityRow {
    /// Parameter updates applied before the measurement.
    pub updates: usize,
    #[serde(flatten)]
    pub metrics: PhysicalityMetrics,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: LdmParameters,
    pub trace: OptimizationTrace,
    pub summary: TrainSummary,
    pub physicality: Vec<PhysicalityRow>,
}

fn physicality_of(params: &LdmParameters) -> Result<PhysicalityMetrics, CliError> {
    Ok(physicality_metrics(&reconstruct_density(params)?)?)
}

/// Trains a machine and writes `checkpoint.json`, `trace.csv`,
/// `summary.json`, `timing.json`, and optionally `physicality.csv` and
/// `checkpoints/step_NNNNNN.json`.
pub fn cmd_train(cfg: &RunConfig, initial: Option<LdmParameters>, out: &Path) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let (n, m) = (cfg.model.n_sites, cfg.n_hidden());
    let params0 = match initial {
        Some(p) => {
            check_machine(cfg, &p)?;
            p
        }
        None => init_params(n, m, cfg.ansatz.init_scale, derive_seed(cfg.seed, INIT_STREAM))?,
    };
    if cfg.physicality_every > 0 && n > RECONSTRUCT_SITE_LIMIT {
        return Err(CliError::Config(format!(
            "`physicality_every` needs at most {RECONSTRUCT_SITE_LIMIT} sites"
        )));
    }
    let estimation = match cfg.estimation {
        EstimationMode::Sampled => Estimation::Sampled(cfg.sampler.reseeded(derive_seed(cfg.seed, TRAIN_STREAM))),
        EstimationMode::Exact => Estimation::Exact,
    };
    create_dir(out)?;
    let checkpoint_dir = out.join("checkpoints");
    if cfg.checkpoint_every > 0 {
        create_dir(&checkpoint_dir)?;
    }

    let mut physicality = Vec::new();
    if cfg.physicality_every > 0 {
        physicality.push(PhysicalityRow {
            updates: 0,
            metrics: physicality_of(&params0)?,
        });
    }
    let (params, trace) = run_optimization_with(
        &cfg.model,
        &params0,
        &estimation,
        &cfg.optimizer,
        cfg.update_rule,
        |record, params| {
            let updates = record.step + usize::from(record.update_norm > 0.0);
            if cfg.checkpoint_every > 0 && (record.step + 1) % cfg.checkpoint_every == 0 {
                params.save(checkpoint_dir.join(format!("step_{:06}.json", record.step + 1)))?;
            }
            if cfg.physicality_every > 0 && (record.step + 1) % cfg.physicality_every == 0 {
                let metrics = physicality_metrics(&reconstruct_density(params)?)?;
                physicality.push(PhysicalityRow { updates, metrics });
            }
            Ok(())
        },
    )?;

    let exact_cost_abs_sq = if n <= ENUMERATION_SITE_LIMIT {
        Some(exact_estimates(&params, &cfg.model)?.0.abs_sq)
    } else {
        None
    };
    let summary = TrainSummary {
        n_sites: n,
        n_hidden: m,
        n_parameters: parameter_count(n, m),
        steps: trace.len(),
        converged: trace.converged,
        final_cost_abs_sq: trace.last().map(|r| r.cost_abs_sq),
        final_cost_variance: trace.last().map(|r| r.cost_variance),
        exact_cost_abs_sq,
        seed: cfg.seed,
    };

    params.save(out.join("checkpoint.json"))?;
    let trace_path = out.join("trace.csv");
    let file = File::create(&trace_path).map_err(CliError::io(&trace_path))?;
    let mut w = BufWriter::new(file);
    trace.write_csv(&mut w)?;
    w.flush().map_err(CliError::io(&trace_path))?;
    write_json(&out.join("summary.json"), &summary)?;
    let wall = trace.total_wall_time();
    write_json(
        &out.join("timing.json"),
        &Timing {
            wall_time_s: wall,
            mean_step_s: if trace.is_empty() {
                0.0
            } else {
                wall / trace.len() as f64
            },
        },
    )?;
    if cfg.physicality_every > 0 {
        let mut w = csv_writer(&out.join("physicality.csv"))?;
        w.write_record([
            "updates",
            "min_real_eigenvalue",
            "sum_abs_imag_eigenvalues",
            "hermiticity_defect",
        ])?;
        for row in &physicality {
            w.write_record([
                row.updates.to_string(),
                num(row.metrics.min_real_eigenvalue),
                num(row.metrics.sum_abs_imag_eigenvalues),
                num(row.metrics.hermiticity_defect),
            ])?;
        }
        w.flush().map_err(CliError::io(out.join("physicality.csv")))?;
    }
    log::info!(
        "trained {} steps (converged: {}), final |C|² = {:?}",
        summary.steps,
        summary.converged,
        summary.final_cost_abs_sq
    );
    Ok(TrainOutcome {
        params,
        trace,
        summary,
        physicality,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservableRow {
    pub observable: &'static str,
    pub site: Option<usize>,
    pub value: f64,
    pub stderr: f64,
    pub imag_residual: f64,
}

/// Operators reported for `sites`: σx and σz on each site, σzσz and σxσx on
/// the bond starting there when it exists.
pub fn observables_for(n_sites: usize, sites: &[usize]) -> Vec<Observable> {
    let mut ops = vec![Observable::Identity];
    for &i in sites {
        ops.push(Observable::SigmaX(i));
        ops.push(Observable::SigmaZ(i));
        if i + 1 < n_sites {
            ops.push(Observable::SigmaZZ(i));
            ops.push(Observable::SigmaXX(i));
        }
    }
    ops
}

/// Diagonal-chain estimates written to `observables.csv`.
pub fn cmd_observables(cfg: &RunConfig, params: &LdmParameters, out: &Path) -> Result<Vec<ObservableRow>, CliError> {
    cfg.validate()?;
    check_machine(cfg, params)?;
    let chains = cfg.diagonal_chains().reseeded(derive_seed(cfg.seed, DIAGONAL_STREAM));
    let batch = run_diagonal_chain(params, &cfg.model, &chains)?;
    let rows = observables_for(cfg.model.n_sites, &cfg.observable_sites())
        .into_iter()
        .map(|op| {
            let est = estimate_observable(params, &cfg.model, &batch, op)?;
            Ok(ObservableRow {
                observable: op.name(),
                site: op.site(),
                value: est.value,
                stderr: est.stderr,
                imag_residual: est.imag_residual,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    create_dir(out)?;
    let path = out.join("observables.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["observable", "site", "value", "stderr", "imag_residual"])?;
    for r in &rows {
        w.write_record([
            r.observable.to_string(),
            r.site.map(|s| s.to_string()).unwrap_or_default(),
            num(r.value),
            num(r.stderr),
            num(r.imag_residual),
        ])?;
    }
    w.flush().map_err(CliError::io(&path))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub h: f64,
    /// Sites of the transposed subsystem.
    pub subsystem: Vec<usize>,
    pub negativity: f64,
    pub purity: f64,
    pub sx: f64,
    pub sz: f64,
    pub szsz: Option<f64>,
    pub sxsx: Option<f64>,
}

/// Exact steady states over the configured field values, written to
/// `ed_sweep.csv` with one row per field value and contiguous bipartition.
/// Single-site observables refer to the central site, bond observables to
/// the bond starting there.
pub fn cmd_ed_sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<SweepRow>, CliError> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("`sweep` is required for ed-sweep".into()))?;
    let n = cfg.model.n_sites;
    let c = central_site(n);
    let cuts = contiguous_bipartitions(n);
    let per_point: Vec<Vec<SweepRow>> = sweep
        .values
        .par_iter()
        .map(|&h| {
            let ss = steady_state_ed(&cfg.model.with_field(h))?;
            let real = |op| expectation(&ss, op).map(|z| z.re);
            let bond = |op| if c + 1 < n { real(op).map(Some) } else { Ok(None) };
            let (p, sx, sz) = (purity(&ss), real(Observable::SigmaX(c))?, real(Observable::SigmaZ(c))?);
            let (szsz, sxsx) = (bond(Observable::SigmaZZ(c))?, bond(Observable::SigmaXX(c))?);
            let row = |subsystem: Vec<usize>, negativity| SweepRow {
                h,
                subsystem,
                negativity,
                purity: p,
                sx,
                sz,
                szsz,
                sxsx,
            };
            if cuts.is_empty() {
                return Ok(vec![row(Vec::new(), 0.0)]);
            }
            cuts.iter()
                .map(|cut| Ok(row(cut.clone(), negativity(&ss, cut)?)))
                .collect::<Result<Vec<_>, ldm_core::Error>>()
        })
        .collect::<Result<_, ldm_core::Error>>()?;
    let rows: Vec<SweepRow> = per_point.into_iter().flatten().collect();

    create_dir(out)?;
    let path = out.join("ed_sweep.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["h", "subsystem", "negativity", "purity", "sx", "sz", "szsz", "sxsx"])?;
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    for r in &rows {
        let sub: Vec<String> = r.subsystem.iter().map(|s| s.to_string()).collect();
        w.write_record([
            num(r.h),
            sub.join(" "),
            num(r.negativity),
            num(r.purity),
            num(r.sx),
            num(r.sz),
            opt(r.szsz),
            opt(r.sxsx),
        ])?;
    }
    w.flush().map_err(CliError::io(&path))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RHat {
    pub local_cost_re: Option<f64>,
    pub local_cost_im: Option<f64>,
    pub log_amplitude_re: Option<f64>,
    /// Why a value is missing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub n_chains: usize,
    pub samples_per_chain: usize,
    pub acceptance_rate: f64,
    pub chain_acceptance_rates: Vec<f64>,
    pub flagged_samples: usize,
    pub cost_abs_sq: f64,
    pub cost_variance: f64,
    pub r_hat: RHat,
    /// Only for chains short enough to rebuild `ρ` densely.
    pub physicality: Option<PhysicalityMetrics>,
}

fn r_hat(batch: &SampleBatch, series: &[f64]) -> Result<f64, ldm_core::Error> {
    gelman_rubin(&batch.split_by_chain(series))
}

/// Sampler and physicality diagnostics written to `diagnostics.json`.
pub fn cmd_diagnostics(cfg: &RunConfig, params: &LdmParameters, out: &Path) -> Result<DiagnosticsReport, CliError> {
    cfg.validate()?;
    check_machine(cfg, params)?;
    let chains = cfg.sampler.reseeded(derive_seed(cfg.seed, DIAGNOSTIC_STREAM));
    let batch = run_chain(params, &cfg.model, &chains)?;
    let q = batch_quantities(params, &cfg.model, &batch)?;
    let cost = estimate_cost(&q.c_loc)?;

    let r_hat = if chains.n_chains < 2 {
        RHat {
            local_cost_re: None,
            local_cost_im: None,
            log_amplitude_re: None,
            note: Some("unavailable: needs at least 2 chains".into()),
        }
    } else {
        // flagged samples are dropped, so the local cost is indexed through `kept`
        let mut c_re = vec![f64::NAN; batch.len()];
        let mut c_im = vec![f64::NAN; batch.len()];
        for (k, c) in q.kept.iter().zip(&q.c_loc) {
            c_re[*k] = c.re;
            c_im[*k] = c.im;
        }
        let log_amp: Vec<f64> = batch.log_amps.iter().map(|z| z.re).collect();
        let mut notes = Vec::new();
        let mut stat = |name: &str, series: &[f64]| {
            if series.iter().any(|x| x.is_nan()) {
                notes.push(format!("{name}: flagged samples present"));
                return None;
            }
            match r_hat(&batch, series) {
                Ok(r) => Some(r),
                Err(e) => {
                    notes.push(format!("{name}: {e}"));
                    None
                }
            }
        };
        let (a, b, c) = (
            stat("local_cost_re", &c_re),
            stat("local_cost_im", &c_im),
            stat("log_amplitude_re", &log_amp),
        );
        RHat {
            local_cost_re: a,
            local_cost_im: b,
            log_amplitude_re: c,
            note: (!notes.is_empty()).then(|| notes.join("; ")),
        }
    };
    let physicality = if cfg.model.n_sites <= RECONSTRUCT_SITE_LIMIT {
        Some(physicality_of(params)?)
    } else {
        None
    };
    let report = DiagnosticsReport {
        n_chains: chains.n_chains,
        samples_per_chain: chains.n_samples,
        acceptance_rate: batch.acceptance_rate(),
        chain_acceptance_rates: batch.chain_acceptance_rates(),
        flagged_samples: q.flagged,
        cost_abs_sq: cost.abs_sq,
        cost_variance: cost.variance,
        r_hat,
        physicality,
    };
    create_dir(out)?;
    write_json(&out.join("diagnostics.json"), &report)?;
    Ok(report)
}

/// Output directory: the command-line override, else the configured one.
pub fn output_dir(cfg: &RunConfig, over: Option<&Path>) -> PathBuf {
    over.map(Path::to_path_buf).unwrap_or_else(|| cfg.outputs.clone())
}
