//! Run configuration: JSON schema, validation and shipped presets.

use std::path::{Path, PathBuf};

use ldm_core::ansatz::hidden_units;
use ldm_core::{ChainConfig, ModelSpec, SrConfig, UpdateRule, Variant};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Schema version understood by this build.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub model: ModelSpec,
    pub ansatz: AnsatzConfig,
    /// Chains over `|ρ|²` used by training and diagnostics.
    pub sampler: ChainConfig,
    /// Chains over the diagonal used for observables; defaults to `sampler`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagonal_sampler: Option<ChainConfig>,
    pub optimizer: SrConfig,
    #[serde(default)]
    pub update_rule: UpdateRule,
    #[serde(default)]
    pub estimation: EstimationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observables: Option<ObservableSites>,
    /// Write a checkpoint every this many steps (0 disables).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Record physicality metrics of the reconstructed state every this many
    /// steps (0 disables; needs `N ≤ 5`).
    #[serde(default)]
    pub physicality_every: usize,
    pub outputs: PathBuf,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnsatzConfig {
    /// Hidden-unit density `M/N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Explicit hidden-unit count; overrides `beta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    0.01
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimationMode {
    #[default]
    Sampled,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    H,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSites {
    /// Sites (first site of bond operators) to report; default is the
    /// central site and the bond starting there.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<usize>>,
}

/// Site `N/2 − 1` for even `N` (left of centre), `(N−1)/2` for odd `N`.
pub fn central_site(n_sites: usize) -> usize {
    if n_sites.is_multiple_of(2) {
        n_sites / 2 - 1
    } else {
        (n_sites - 1) / 2
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            CliError::Config(format!(
                "at `{}` (line {}, column {}): {inner}",
                e.path(),
                inner.line(),
                inner.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("configs always serialize");
        text.push('\n');
        text
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, msg: String| Err(CliError::Config(format!("`{key}`: {msg}")));
        if self.version != CONFIG_VERSION {
            return bad(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            );
        }
        if let Err(e) = self.model.validate() {
            return bad("model", e.to_string());
        }
        match (self.ansatz.beta, self.ansatz.hidden) {
            (None, None) => return bad("ansatz", "either `beta` or `hidden` is required".into()),
            (Some(b), _) if !(b.is_finite() && b >= 0.0) => {
                return bad("ansatz.beta", format!("must be a non-negative number, got {b}"))
            }
            _ => {}
        }
        if !(self.ansatz.init_scale.is_finite() && self.ansatz.init_scale >= 0.0) {
            return bad(
                "ansatz.init_scale",
                format!("must be non-negative, got {}", self.ansatz.init_scale),
            );
        }
        if let Err(e) = self.sampler.validate() {
            return bad("sampler", e.to_string());
        }
        if let Some(d) = &self.diagonal_sampler {
            if let Err(e) = d.validate() {
                return bad("diagonal_sampler", e.to_string());
            }
        }
        if let Err(e) = self.optimizer.validate() {
            return bad("optimizer", e.to_string());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return bad("sweep.values", "at least one value is required".into());
            }
            if let Some(v) = sweep.values.iter().find(|v| !v.is_finite()) {
                return bad("sweep.values", format!("non-finite value {v}"));
            }
        }
        if let Some(sites) = self.observables.as_ref().and_then(|o| o.sites.as_ref()) {
            if let Some(s) = sites.iter().find(|&&s| s >= self.model.n_sites) {
                return bad(
                    "observables.sites",
                    format!("site {s} outside a {}-site chain", self.model.n_sites),
                );
            }
        }
        Ok(())
    }

    /// `M = round(β·N)` unless given explicitly.
    pub fn n_hidden(&self) -> usize {
        match (self.ansatz.hidden, self.ansatz.beta) {
            (Some(m), _) => m,
            (None, Some(beta)) => hidden_units(self.model.n_sites, beta),
            (None, None) => 0,
        }
    }

    pub fn diagonal_chains(&self) -> ChainConfig {
        self.diagonal_sampler.clone().unwrap_or_else(|| self.sampler.clone())
    }

    pub fn observable_sites(&self) -> Vec<usize> {
        self.observables
            .as_ref()
            .and_then(|o| o.sites.clone())
            .unwrap_or_else(|| vec![central_site(self.model.n_sites)])
    }
}

/// Shipped hyperparameter sets, applied to an `n`-site chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// β = 1: η = 1e−2, λ = 1e−2, 4500 samples, 1000 steps, 500 diagonal samples.
    Beta1,
    /// β = 2: 6000 samples, 2000 steps, 800 diagonal samples, otherwise as β = 1.
    Beta2,
    /// β = 1.4: η = 1e−3, λ = 3e−3, 9000 samples, 7000 steps, 800 diagonal samples.
    FineStep,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Beta1, Preset::Beta2, Preset::FineStep];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Beta1 => "beta1",
            Preset::Beta2 => "beta2",
            Preset::FineStep => "fine-step",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn config(self, variant: Variant, n_sites: usize, field: f64) -> Result<RunConfig, CliError> {
        const CHAINS: usize = 4;
        let (beta, eta, lambda, samples, steps, diagonal) = match self {
            Preset::Beta1 => (1.0, 1e-2, 1e-2, 4500usize, 1000, 500usize),
            Preset::Beta2 => (2.0, 1e-2, 1e-2, 6000, 2000, 800),
            Preset::FineStep => (1.4, 1e-3, 3e-3, 9000, 7000, 800),
        };
        let model = ModelSpec::new(variant, n_sites, 2.0, field).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg = RunConfig {
            version: CONFIG_VERSION,
            model,
            ansatz: AnsatzConfig {
                beta: Some(beta),
                hidden: None,
                init_scale: default_init_scale(),
            },
            sampler: preset_chains(n_sites, samples.div_ceil(CHAINS), CHAINS),
            diagonal_sampler: Some(preset_chains(n_sites, diagonal.div_ceil(CHAINS), CHAINS)),
            optimizer: SrConfig::new(eta, lambda, steps),
            update_rule: UpdateRule::Sr,
            estimation: EstimationMode::Sampled,
            sweep: None,
            observables: None,
            checkpoint_every: 0,
            physicality_every: 0,
            outputs: PathBuf::from(format!("runs/{}", self.name())),
            seed: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Four sweeps between kept samples: trained states accept only a few
/// percent of moves, and one sweep leaves consecutive samples correlated.
fn preset_chains(n_sites: usize, n_samples: usize, n_chains: usize) -> ChainConfig {
    ChainConfig {
        thinning: 4 * n_sites,
        ..ChainConfig::for_sites(n_sites, n_samples, n_chains, 0)
    }
}
