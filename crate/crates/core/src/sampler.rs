//! Metropolis-Hastings chains over density-matrix labels.
//!
//! Full chains sample `p(s) ∝ |ρ(s)|²` over all `4^N` configurations.
//! Diagonal chains are restricted to `s ∈ {-2, 2}^N` and sample `∝ |ρ(d)|`,
//! which is what the observable estimator in [`crate::estimators`] expects.
//!
//! All counts in [`ChainConfig`] are single-site Metropolis moves. Each chain
//! owns a ChaCha8 stream selected by its index, so a batch depends only on
//! `(seed, chain index)` and not on how chains are scheduled.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{CachedAmplitude, LdmParameters};
use crate::error::{Error, Result};
use crate::lattice::{ModelSpec, SpinConfiguration, SITE_VALUES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Kept samples per chain.
    pub n_samples: usize,
    /// Moves discarded before the first kept sample.
    pub burn_in: usize,
    /// Moves between consecutive kept samples.
    pub thinning: usize,
    pub n_chains: usize,
    #[serde(default)]
    pub seed: u64,
    /// Run a throwaway chain first and start from its last state.
    #[serde(default = "enabled")]
    pub warm_start: bool,
}

fn enabled() -> bool {
    true
}

impl ChainConfig {
    /// Defaults for an `n`-site chain: burn-in of `10·N` sweeps of `N` moves
    /// and one sweep between kept samples.
    pub fn for_sites(n: usize, n_samples: usize, n_chains: usize, seed: u64) -> Self {
        Self {
            n_samples,
            burn_in: 10 * n * n,
            thinning: n.max(1),
            n_chains,
            seed,
            warm_start: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thinning == 0 {
            return Err(Error::Domain("thinning must be at least 1".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::Domain("at least one chain is required".into()));
        }
        Ok(())
    }

    /// Moves per chain after the optional warm start.
    pub fn moves_per_chain(&self) -> usize {
        self.burn_in + self.n_samples * self.thinning
    }

    pub fn total_samples(&self) -> usize {
        self.n_samples * self.n_chains
    }

    /// Same configuration with the seed replaced.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Kept samples of one or more chains, ordered by chain index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleBatch {
    pub configs: Vec<SpinConfiguration>,
    pub log_amps: Vec<Complex64>,
    pub chain_ids: Vec<usize>,
    /// Accepted and proposed moves per chain, including burn-in.
    pub accepted: Vec<usize>,
    pub proposed: Vec<usize>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn n_chains(&self) -> usize {
        self.accepted.len()
    }

    pub fn acceptance_rate(&self) -> f64 {
        let proposed: usize = self.proposed.iter().sum();
        if proposed == 0 {
            return 0.0;
        }
        self.accepted.iter().sum::<usize>() as f64 / proposed as f64
    }

    pub fn chain_acceptance_rates(&self) -> Vec<f64> {
        self.accepted
            .iter()
            .zip(&self.proposed)
            .map(|(&a, &p)| if p == 0 { 0.0 } else { a as f64 / p as f64 })
            .collect()
    }

    /// Splits a per-sample series into one vector per chain.
    pub fn split_by_chain<T: Clone>(&self, values: &[T]) -> Vec<Vec<T>> {
        let mut out = vec![Vec::new(); self.n_chains()];
        for (v, &c) in values.iter().zip(&self.chain_ids) {
            out[c].push(v.clone());
        }
        out
    }

    fn append(&mut self, chain: ChainOutput, id: usize) {
        self.chain_ids.extend(std::iter::repeat_n(id, chain.configs.len()));
        self.configs.extend(chain.configs);
        self.log_amps.extend(chain.log_amps);
        self.accepted.push(chain.accepted);
        self.proposed.push(chain.proposed);
    }

    /// One row per kept sample: chain id, step within the chain, site values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.configs.first().map_or(0, |c| c.len());
        let header: Vec<String> = ["chain".to_string(), "step".to_string()]
            .into_iter()
            .chain((0..n).map(|i| format!("s{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        let mut step = 0usize;
        for (k, (config, &chain)) in self.configs.iter().zip(&self.chain_ids).enumerate() {
            if k > 0 && self.chain_ids[k - 1] != chain {
                step = 0;
            }
            let sites: Vec<String> = config.sites().iter().map(|v| v.to_string()).collect();
            writeln!(out, "{chain},{step},{}", sites.join(","))?;
            step += 1;
        }
        Ok(())
    }
}

/// Which Markov chain to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainKind {
    /// All configurations, weight `|ρ(s)|²`.
    Full,
    /// Diagonal configurations only, weight `|ρ(d)|`.
    Diagonal,
}

impl ChainKind {
    fn weight_power(self) -> f64 {
        match self {
            ChainKind::Full => 2.0,
            ChainKind::Diagonal => 1.0,
        }
    }
}

/// Picks a site uniformly and replaces its value by one of the other three.
pub fn propose_move<R: Rng + ?Sized>(s: &SpinConfiguration, rng: &mut R) -> SpinConfiguration {
    let site = rng.random_range(0..s.len());
    let current = s.sites()[site];
    let pick = rng.random_range(0..3);
    let value = SITE_VALUES
        .iter()
        .copied()
        .filter(|&v| v != current)
        .nth(pick)
        .expect("three alternatives");
    s.with_site(site, value)
}

/// Flips one uniformly chosen site between `2` and `-2`.
pub fn propose_diagonal_move<R: Rng + ?Sized>(s: &SpinConfiguration, rng: &mut R) -> SpinConfiguration {
    let site = rng.random_range(0..s.len());
    s.with_site(site, -s.sites()[site])
}

/// One Metropolis step on `|ρ|²`, returning the next state.
pub fn metropolis_step<R: Rng + ?Sized>(
    params: &LdmParameters,
    s: &SpinConfiguration,
    rng: &mut R,
) -> Result<SpinConfiguration> {
    let mut state = CachedAmplitude::new(params, s)?;
    step_in_place(&mut state, ChainKind::Full, rng);
    Ok(state.config)
}

/// Advances `state` by one move; returns whether it was accepted.
fn step_in_place<R: Rng + ?Sized>(state: &mut CachedAmplitude<'_>, kind: ChainKind, rng: &mut R) -> bool {
    let proposal = match kind {
        ChainKind::Full => propose_move(&state.config, rng),
        ChainKind::Diagonal => propose_diagonal_move(&state.config, rng),
    };
    let (log_new, theta) = state.evaluate(&proposal);
    let log_p = kind.weight_power() * (log_new.re - state.log_rho.re);
    let r: f64 = rng.random();
    // a NaN log_p (underflowed current state) accepts, which moves the chain out
    let accept = log_p >= 0.0 || log_p.is_nan() || r < log_p.exp();
    if accept {
        state.move_to(proposal, log_new, theta);
    }
    accept
}

struct ChainOutput {
    configs: Vec<SpinConfiguration>,
    log_amps: Vec<Complex64>,
    accepted: usize,
    proposed: usize,
}

fn random_start<R: Rng + ?Sized>(n: usize, kind: ChainKind, rng: &mut R) -> SpinConfiguration {
    let sites = (0..n)
        .map(|_| match kind {
            ChainKind::Full => SITE_VALUES[rng.random_range(0..4)],
            ChainKind::Diagonal => {
                if rng.random::<bool>() {
                    2
                } else {
                    -2
                }
            }
        })
        .collect();
    SpinConfiguration::from_raw(sites)
}

/// RNG for chain `index` of a run seeded with `seed`.
pub fn chain_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Derives an independent seed for sub-run `stream` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1 << 63));
    rng.next_u64()
}

fn single_chain(
    params: &LdmParameters,
    n_sites: usize,
    config: &ChainConfig,
    index: usize,
    kind: ChainKind,
    start: Option<&SpinConfiguration>,
) -> Result<ChainOutput> {
    let mut rng = chain_rng(config.seed, index);
    let mut out = ChainOutput {
        configs: Vec::with_capacity(config.n_samples),
        log_amps: Vec::with_capacity(config.n_samples),
        accepted: 0,
        proposed: 0,
    };
    if config.n_samples == 0 {
        return Ok(out);
    }
    let initial = match start {
        Some(s) => s.clone(),
        None => random_start(n_sites, kind, &mut rng),
    };
    let mut state = CachedAmplitude::new(params, &initial)?;
    if config.warm_start {
        for _ in 0..config.moves_per_chain() {
            step_in_place(&mut state, kind, &mut rng);
        }
    }
    for _ in 0..config.burn_in {
        out.accepted += usize::from(step_in_place(&mut state, kind, &mut rng));
        out.proposed += 1;
    }
    for _ in 0..config.n_samples {
        for _ in 0..config.thinning {
            out.accepted += usize::from(step_in_place(&mut state, kind, &mut rng));
            out.proposed += 1;
        }
        out.configs.push(state.config.clone());
        out.log_amps.push(state.log_rho);
    }
    Ok(out)
}

/// Runs `config.n_chains` chains of the given kind.
///
/// `starts`, when given, overrides the random initial state of each chain.
pub fn run_chains(
    params: &LdmParameters,
    model: &ModelSpec,
    config: &ChainConfig,
    kind: ChainKind,
    starts: Option<&[SpinConfiguration]>,
) -> Result<SampleBatch> {
    config.validate()?;
    let n = model.n_sites;
    if params.n_visible() != n {
        return Err(Error::Domain(format!(
            "machine has {} visible units but the model has {n} sites",
            params.n_visible()
        )));
    }
    if let Some(starts) = starts {
        if starts.len() != config.n_chains {
            return Err(Error::Domain("one start configuration per chain is required".into()));
        }
    }
    let chains: Vec<ChainOutput> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| single_chain(params, n, config, c, kind, starts.map(|s| &s[c])))
        .collect::<Result<_>>()?;
    let mut batch = SampleBatch::default();
    for (c, chain) in chains.into_iter().enumerate() {
        batch.append(chain, c);
    }
    Ok(batch)
}

/// Samples `p(s) ∝ |ρ(s)|²` over all configurations.
pub fn run_chain(params: &LdmParameters, model: &ModelSpec, config: &ChainConfig) -> Result<SampleBatch> {
    run_chains(params, model, config, ChainKind::Full, None)
}

/// Samples diagonal configurations with weight `|ρ(d)|`.
pub fn run_diagonal_chain(params: &LdmParameters, model: &ModelSpec, config: &ChainConfig) -> Result<SampleBatch> {
    run_chains(params, model, config, ChainKind::Diagonal, None)
}

/// Gelman-Rubin potential scale reduction `R̂` over equal-length chains.
///
/// With `W` the mean within-chain variance and `B/n` the variance of the
/// chain means, `R̂ = sqrt(((n−1)/n·W + B/n) / W)`.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Domain("R-hat needs at least two chains".into()));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 2 {
        return Err(Error::Domain("R-hat needs at least two samples per chain".into()));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64]| {
        let mu = mean(xs);
        xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let trimmed: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = trimmed.iter().map(|c| mean(c)).collect();
    let within = trimmed.iter().map(|c| var(c)).sum::<f64>() / trimmed.len() as f64;
    let between_over_n = var(&means);
    if within <= 0.0 || !within.is_finite() {
        return Err(Error::DegenerateVariance("within-chain variance is zero"));
    }
    let nf = n as f64;
    Ok((((nf - 1.0) / nf * within + between_over_n) / within).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::init_params;
    use crate::lattice::Variant;
    use std::collections::HashMap;

    fn model(n: usize) -> ModelSpec {
        ModelSpec::new(Variant::Zz, n, 2.0, 1.0).unwrap()
    }

    #[test]
    fn proposal_changes_exactly_one_site() {
        let mut rng = chain_rng(1, 0);
        let s = SpinConfiguration::new(vec![2, -1, 1, -2]).unwrap();
        for _ in 0..1000 {
            let t = propose_move(&s, &mut rng);
            let diff = s.sites().iter().zip(t.sites()).filter(|(a, b)| a != b).count();
            assert_eq!(diff, 1);
        }
    }

    #[test]
    fn single_site_proposals_are_uniform() {
        let mut rng = chain_rng(2, 0);
        let s = SpinConfiguration::new(vec![2]).unwrap();
        let draws = 100_000;
        let mut counts: HashMap<i8, usize> = HashMap::new();
        for _ in 0..draws {
            *counts.entry(propose_move(&s, &mut rng).sites()[0]).or_default() += 1;
        }
        assert_eq!(counts.len(), 3);
        let p = 1.0 / 3.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for v in [1, -1, -2] {
            assert!(
                (counts[&v] as f64 - draws as f64 * p).abs() < 3.0 * sigma,
                "{v}: {}",
                counts[&v]
            );
        }
    }

    #[test]
    fn proposal_is_symmetric() {
        let mut rng = chain_rng(3, 0);
        let a = SpinConfiguration::new(vec![2, 1]).unwrap();
        let b = SpinConfiguration::new(vec![2, -2]).unwrap();
        let draws = 100_000;
        let ab = (0..draws).filter(|_| propose_move(&a, &mut rng) == b).count() as f64;
        let ba = (0..draws).filter(|_| propose_move(&b, &mut rng) == a).count() as f64;
        let p = 1.0 / 6.0;
        let sigma = (2.0 * draws as f64 * p * (1.0 - p)).sqrt();
        assert!((ab - ba).abs() < 3.0 * sigma);
    }

    #[test]
    fn zero_parameters_always_accept() {
        let p = LdmParameters::zeros(3, 2);
        let cfg = ChainConfig::for_sites(3, 200, 2, 5);
        let batch = run_chain(&p, &model(3), &cfg).unwrap();
        assert_eq!(batch.acceptance_rate(), 1.0);
    }

    #[test]
    fn empty_and_deterministic_batches() {
        let p = init_params(2, 2, 0.3, 1).unwrap();
        let mut cfg = ChainConfig::for_sites(2, 0, 3, 9);
        assert!(run_chain(&p, &model(2), &cfg).unwrap().is_empty());
        cfg.n_samples = 500;
        let a = run_chain(&p, &model(2), &cfg).unwrap();
        let b = run_chain(&p, &model(2), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1500);
        assert_eq!(a.split_by_chain(&a.configs).len(), 3);
        let c = run_chain(&p, &model(2), &cfg.reseeded(10)).unwrap();
        assert_ne!(a.configs, c.configs);
    }

    #[test]
    fn uniform_chain_site_means_vanish() {
        let p = LdmParameters::zeros(2, 2);
        let cfg = ChainConfig::for_sites(2, 25_000, 4, 17);
        let batch = run_chain(&p, &model(2), &cfg).unwrap();
        let n = batch.len() as f64;
        // uniform over {±1, ±2}: variance 2.5
        let sigma = (2.5 / n).sqrt();
        for site in 0..2 {
            let mean = batch.configs.iter().map(|c| f64::from(c.sites()[site])).sum::<f64>() / n;
            assert!(mean.abs() < 3.0 * sigma, "site {site}: {mean}");
        }
    }

    #[test]
    fn diagonal_chain_stays_diagonal() {
        let p = init_params(3, 3, 0.5, 4).unwrap();
        let cfg = ChainConfig::for_sites(3, 300, 2, 1);
        let batch = run_diagonal_chain(&p, &model(3), &cfg).unwrap();
        assert!(batch.configs.iter().all(SpinConfiguration::is_diagonal));
    }

    #[test]
    fn diagonal_chain_concentrates_on_dominant_state() {
        let mut p = LdmParameters::zeros(3, 0);
        p.a1_mut().fill(Complex64::new(-10.0, 0.0));
        let cfg = ChainConfig::for_sites(3, 500, 2, 8);
        let batch = run_diagonal_chain(&p, &model(3), &cfg).unwrap();
        let down = SpinConfiguration::new(vec![-2, -2, -2]).unwrap();
        assert!(batch.configs.iter().all(|c| *c == down));
    }

    #[test]
    fn csv_dump_layout() {
        let p = LdmParameters::zeros(2, 1);
        let mut cfg = ChainConfig::for_sites(2, 2, 2, 0);
        cfg.warm_start = false;
        let batch = run_chain(&p, &model(2), &cfg).unwrap();
        let mut buf = Vec::new();
        batch.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "chain,step,s0,s1");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("1,0,"));
        assert!(lines[4].starts_with("1,1,"));
    }

    #[test]
    fn gelman_rubin_identical_chains() {
        let c = vec![1.0, 2.0, 5.0, 3.0, 4.0];
        let r = gelman_rubin(&[c.clone(), c]).unwrap();
        assert!((r - (4.0f64 / 5.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gelman_rubin_hand_computed() {
        // W = 5/3 for both chains, chain means 2.5 and 2.6, B/n = var(means) = 0.005
        let r = gelman_rubin(&[vec![1.0, 2.0, 3.0, 4.0], vec![1.1, 2.1, 3.1, 4.1]]).unwrap();
        let w: f64 = 5.0 / 3.0;
        let expected = ((0.75 * w + 0.005) / w).sqrt();
        assert!((r - expected).abs() < 1e-12, "{r} vs {expected}");
    }

    #[test]
    fn gelman_rubin_errors() {
        assert!(gelman_rubin(&[vec![1.0, 2.0]]).is_err());
        assert!(gelman_rubin(&[vec![1.0], vec![2.0]]).is_err());
        assert!(matches!(
            gelman_rubin(&[vec![3.0; 10], vec![3.0; 10]]),
            Err(Error::DegenerateVariance(_))
        ));
    }

    #[test]
    fn gelman_rubin_iid_gaussian_chains() {
        use rand_distr::{Distribution, StandardNormal};
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|c| {
                let mut rng = chain_rng(99, c);
                (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect()
            })
            .collect();
        let r = gelman_rubin(&chains).unwrap();
        assert!((0.99..=1.05).contains(&r), "{r}");
    }
}
