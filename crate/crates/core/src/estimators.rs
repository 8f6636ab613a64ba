//! Monte Carlo reductions: cost, quantum Fisher matrix, forces, observables.
//!
//! Every estimator comes in a sampled form (uniform weights over Markov
//! samples) and an exact form that takes explicit probabilities, used with
//! [`ExactDistribution`] for full enumeration on small chains.

use faer::{Accum, Mat, Par};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{CachedAmplitude, LdmParameters};
use crate::error::{Error, Result};
use crate::lattice::{liouvillian_row, site_spins, site_value, ModelSpec, SpinConfiguration};
use crate::sampler::SampleBatch;

/// Largest chain handled by full enumeration of `4^N` configurations.
pub const ENUMERATION_SITE_LIMIT: usize = 6;

/// Fraction of underflow-flagged samples above which a step is aborted.
pub const MAX_FLAGGED_FRACTION: f64 = 0.01;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: Complex64,
    /// `|mean|²`.
    pub abs_sq: f64,
    /// Variance of the local cost, `⟨|C_loc − C|²⟩`.
    pub variance: f64,
    pub n_samples: usize,
}

impl CostEstimate {
    /// Standard error of `mean` for independent samples.
    pub fn std_error(&self) -> f64 {
        (self.variance / self.n_samples as f64).sqrt()
    }
}

/// Regularization-free SR linear system `S γ = ±η f`.
#[derive(Clone, Debug)]
pub struct SrSystem {
    /// `S_ij = ⟨O_i* O_j⟩ − ⟨O_i*⟩⟨O_j⟩`
    pub s: Mat<Complex64>,
    /// `f_i = ⟨O_i* C_loc⟩ − ⟨O_i*⟩⟨C_loc⟩`
    pub f: Vec<Complex64>,
}

impl SrSystem {
    pub fn dim(&self) -> usize {
        self.f.len()
    }

    /// `max |S − S†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.s.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..=i {
                worst = worst.max((self.s[(i, j)] - self.s[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

/// `C_loc(s) = Σ_{s′} ⟨⟨s|L|s′⟩⟩ ρ(s′)/ρ(s)`.
pub fn local_cost(params: &LdmParameters, model: &ModelSpec, s: &SpinConfiguration) -> Result<Complex64> {
    let cache = CachedAmplitude::new(params, s)?;
    local_cost_cached(&cache, model)
}

fn local_cost_cached(cache: &CachedAmplitude<'_>, model: &ModelSpec) -> Result<Complex64> {
    if !cache.log_rho.is_finite() {
        return Err(Error::Underflow(cache.config.sites().to_vec()));
    }
    let row = liouvillian_row(model, &cache.config);
    let mut total = ZERO;
    for (target, amp) in &row.entries {
        total += if *target == cache.config {
            *amp
        } else {
            amp * cache.ratio(target)
        };
    }
    if !total.is_finite() {
        return Err(Error::Underflow(cache.config.sites().to_vec()));
    }
    Ok(total)
}

/// Per-sample log-derivatives and local costs for a batch.
#[derive(Clone, Debug, Default)]
pub struct LocalQuantities {
    /// One log-derivative vector per retained sample.
    pub o: Vec<Vec<Complex64>>,
    pub c_loc: Vec<Complex64>,
    /// Index into the batch of each retained sample.
    pub kept: Vec<usize>,
    /// Samples dropped because their amplitude underflowed.
    pub flagged: usize,
}

fn evaluate_one(
    params: &LdmParameters,
    model: &ModelSpec,
    s: &SpinConfiguration,
) -> Result<Option<(Vec<Complex64>, Complex64)>> {
    let cache = CachedAmplitude::new(params, s)?;
    match local_cost_cached(&cache, model) {
        Ok(c) => {
            let o = cache.log_derivatives();
            if o.iter().all(|z| z.is_finite()) {
                Ok(Some((o, c)))
            } else {
                Ok(None)
            }
        }
        Err(Error::Underflow(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Evaluates `O(s)` and `C_loc(s)` for every configuration, dropping
/// underflowed samples. Fails if more than 1% are dropped.
pub fn local_quantities(
    params: &LdmParameters,
    model: &ModelSpec,
    configs: &[SpinConfiguration],
) -> Result<LocalQuantities> {
    let evaluated: Vec<Option<(Vec<Complex64>, Complex64)>> = configs
        .par_iter()
        .map(|s| evaluate_one(params, model, s))
        .collect::<Result<_>>()?;
    let mut out = LocalQuantities::default();
    for (k, item) in evaluated.into_iter().enumerate() {
        match item {
            Some((o, c)) => {
                out.o.push(o);
                out.c_loc.push(c);
                out.kept.push(k);
            }
            None => out.flagged += 1,
        }
    }
    if out.flagged > 0 {
        log::warn!(
            "{} of {} samples flagged for amplitude underflow",
            out.flagged,
            configs.len()
        );
    }
    if out.flagged as f64 > MAX_FLAGGED_FRACTION * configs.len() as f64 {
        return Err(Error::TooManyFlagged {
            flagged: out.flagged,
            total: configs.len(),
        });
    }
    Ok(out)
}

/// [`local_quantities`] over the samples of a batch.
pub fn batch_quantities(params: &LdmParameters, model: &ModelSpec, batch: &SampleBatch) -> Result<LocalQuantities> {
    local_quantities(params, model, &batch.configs)
}

/// Sample mean, `|mean|²` and unbiased sample variance of the local costs.
pub fn estimate_cost(local_costs: &[Complex64]) -> Result<CostEstimate> {
    let n = local_costs.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mean = local_costs.iter().sum::<Complex64>() / n as f64;
    let ss: f64 = local_costs.iter().map(|c| (c - mean).norm_sqr()).sum();
    let variance = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
    Ok(CostEstimate {
        mean,
        abs_sq: mean.norm_sqr(),
        variance,
        n_samples: n,
    })
}

/// Cost statistics under explicit probabilities `weights` (summing to one).
pub fn exact_cost(weights: &[f64], local_costs: &[Complex64]) -> Result<CostEstimate> {
    check_weights(weights, local_costs.len())?;
    let mean: Complex64 = weights.iter().zip(local_costs).map(|(w, c)| c * *w).sum();
    let variance = weights
        .iter()
        .zip(local_costs)
        .map(|(w, c)| w * (c - mean).norm_sqr())
        .sum();
    Ok(CostEstimate {
        mean,
        abs_sq: mean.norm_sqr(),
        variance,
        n_samples: local_costs.len(),
    })
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if weights.len() != n {
        return Err(Error::Domain(format!("{} weights for {n} samples", weights.len())));
    }
    Ok(())
}

/// Sample-averaged `S` and `f` with local costs standing in for `L`.
pub fn fisher_and_forces(o: &[Vec<Complex64>], local_costs: &[Complex64]) -> Result<SrSystem> {
    let n = local_costs.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    fisher_and_forces_weighted(&vec![1.0 / n as f64; n], o, local_costs)
}

/// `S` and `f` under explicit probabilities `weights`.
pub fn fisher_and_forces_weighted(
    weights: &[f64],
    o: &[Vec<Complex64>],
    local_costs: &[Complex64],
) -> Result<SrSystem> {
    check_weights(weights, local_costs.len())?;
    if o.len() != local_costs.len() {
        return Err(Error::Domain(format!(
            "{} derivative vectors for {} local costs",
            o.len(),
            local_costs.len()
        )));
    }
    let p = o[0].len();
    if o.iter().any(|row| row.len() != p) {
        return Err(Error::Domain("derivative vectors differ in length".into()));
    }
    let n = o.len();
    let total: f64 = weights.iter().sum();

    let mut o_mean = vec![ZERO; p];
    for (w, row) in weights.iter().zip(o) {
        for (acc, x) in o_mean.iter_mut().zip(row) {
            *acc += x * (*w / total);
        }
    }
    let c_mean: Complex64 = weights.iter().zip(local_costs).map(|(w, c)| c * (*w / total)).sum();

    // rows scaled by sqrt(w) so that S = Oᴴ O and f = Oᴴ c
    let centred = Mat::<Complex64>::from_fn(n, p, |k, i| (o[k][i] - o_mean[i]) * (weights[k] / total).sqrt());
    let costs = Mat::<Complex64>::from_fn(n, 1, |k, _| (local_costs[k] - c_mean) * (weights[k] / total).sqrt());

    let mut s = Mat::<Complex64>::zeros(p, p);
    faer::linalg::matmul::matmul(
        s.as_mut(),
        Accum::Replace,
        centred.adjoint(),
        centred.as_ref(),
        Complex64::new(1.0, 0.0),
        Par::Seq,
    );
    let mut f = Mat::<Complex64>::zeros(p, 1);
    faer::linalg::matmul::matmul(
        f.as_mut(),
        Accum::Replace,
        centred.adjoint(),
        costs.as_ref(),
        Complex64::new(1.0, 0.0),
        Par::Seq,
    );
    // exact Hermitian symmetry
    for i in 0..p {
        s[(i, i)] = Complex64::new(s[(i, i)].re, 0.0);
        for j in 0..i {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)].conj());
            s[(i, j)] = avg;
            s[(j, i)] = avg.conj();
        }
    }
    Ok(SrSystem {
        s,
        f: (0..p).map(|i| f[(i, 0)]).collect(),
    })
}

/// The exact distribution `p(s) ∝ |ρ(s)|²` over all `4^N` configurations.
#[derive(Clone, Debug)]
pub struct ExactDistribution {
    pub configs: Vec<SpinConfiguration>,
    pub log_rho: Vec<Complex64>,
    pub probabilities: Vec<f64>,
}

impl ExactDistribution {
    pub fn new(params: &LdmParameters) -> Result<Self> {
        let n = params.n_visible();
        if n > ENUMERATION_SITE_LIMIT {
            return Err(Error::SizeLimit {
                what: "full enumeration",
                n,
                limit: ENUMERATION_SITE_LIMIT,
            });
        }
        let configs: Vec<SpinConfiguration> = SpinConfiguration::enumerate(n).collect();
        let log_rho: Vec<Complex64> = configs
            .iter()
            .map(|s| crate::ansatz::log_rho(params, s))
            .collect::<Result<_>>()?;
        let max = log_rho.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = log_rho.iter().map(|l| (2.0 * (l.re - max)).exp()).collect();
        let z: f64 = raw.iter().sum();
        Ok(Self {
            configs,
            log_rho,
            probabilities: raw.into_iter().map(|r| r / z).collect(),
        })
    }
}

/// Exact cost and SR system by summing over every configuration.
pub fn exact_estimates(params: &LdmParameters, model: &ModelSpec) -> Result<(CostEstimate, SrSystem)> {
    let dist = ExactDistribution::new(params)?;
    let q = local_quantities(params, model, &dist.configs)?;
    let weights: Vec<f64> = q.kept.iter().map(|&k| dist.probabilities[k]).collect();
    let cost = exact_cost(&weights, &q.c_loc)?;
    let system = fisher_and_forces_weighted(&weights, &q.o, &q.c_loc)?;
    Ok((cost, system))
}

/// Named observables. Bond operators act on sites `(i, i+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observable {
    Identity,
    SigmaX(usize),
    SigmaZ(usize),
    SigmaZZ(usize),
    SigmaXX(usize),
}

impl Observable {
    pub fn name(&self) -> &'static str {
        match self {
            Observable::Identity => "identity",
            Observable::SigmaX(_) => "sx",
            Observable::SigmaZ(_) => "sz",
            Observable::SigmaZZ(_) => "szsz",
            Observable::SigmaXX(_) => "sxsx",
        }
    }

    /// First site the operator acts on, if any.
    pub fn site(&self) -> Option<usize> {
        match *self {
            Observable::Identity => None,
            Observable::SigmaX(i) | Observable::SigmaZ(i) | Observable::SigmaZZ(i) | Observable::SigmaXX(i) => Some(i),
        }
    }

    pub fn check(&self, n_sites: usize) -> Result<()> {
        let last = match *self {
            Observable::Identity => return Ok(()),
            Observable::SigmaX(i) | Observable::SigmaZ(i) => i,
            Observable::SigmaZZ(i) | Observable::SigmaXX(i) => i + 1,
        };
        if last >= n_sites {
            return Err(Error::Domain(format!(
                "{self:?} does not fit a chain of {n_sites} sites"
            )));
        }
        Ok(())
    }

    /// Non-zero elements `A_{d,m}` of row `d` (a computational basis state),
    /// as (ket sites flipped relative to `d`, element).
    pub(crate) fn row(&self, d: &[crate::lattice::Spin]) -> Vec<(Vec<usize>, f64)> {
        match *self {
            Observable::Identity => vec![(vec![], 1.0)],
            Observable::SigmaX(i) => vec![(vec![i], 1.0)],
            Observable::SigmaZ(i) => vec![(vec![], d[i].z())],
            Observable::SigmaZZ(i) => vec![(vec![], d[i].z() * d[i + 1].z())],
            Observable::SigmaXX(i) => vec![(vec![i, i + 1], 1.0)],
        }
    }
}

/// Physical expectation value estimated from a diagonal chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Imaginary part of the estimate; vanishes for Hermitian `ρ`.
    pub imag_residual: f64,
}

/// `Tr[Aρ]/Tr[ρ]` from diagonal samples drawn with weight `|ρ(d)|`.
///
/// Each sample contributes `A_loc(d) = Σ_m A_{d,m} ρ(m,d)/ρ(d,d)` reweighted
/// by the phase of `ρ(d,d)`.
pub fn estimate_observable(
    params: &LdmParameters,
    model: &ModelSpec,
    diagonal_batch: &SampleBatch,
    operator: Observable,
) -> Result<ObservableEstimate> {
    operator.check(model.n_sites)?;
    if diagonal_batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(bad) = diagonal_batch.configs.iter().find(|c| !c.is_diagonal()) {
        return Err(Error::Domain(format!("sample {:?} is not diagonal", bad.sites())));
    }
    let terms: Vec<(Complex64, Complex64)> = diagonal_batch
        .configs
        .par_iter()
        .map(|d| {
            let cache = CachedAmplitude::new(params, d)?;
            let phase = Complex64::from_polar(1.0, cache.log_rho.im);
            let a_loc = local_observable(&cache, operator);
            Ok((phase, phase * a_loc))
        })
        .collect::<Result<_>>()?;
    let n = terms.len() as f64;
    let w_mean: Complex64 = terms.iter().map(|t| t.0).sum::<Complex64>() / n;
    let y_mean: Complex64 = terms.iter().map(|t| t.1).sum::<Complex64>() / n;
    let ratio = y_mean / w_mean;
    // delta method for the ratio of means
    let var = if terms.len() > 1 {
        terms
            .iter()
            .map(|(w, y)| ((y - ratio * w) / w_mean).re.powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    Ok(ObservableEstimate {
        value: ratio.re,
        stderr: (var / n).sqrt(),
        imag_residual: ratio.im,
    })
}

fn local_observable(cache: &CachedAmplitude<'_>, operator: Observable) -> Complex64 {
    let ket: Vec<_> = cache.config.ket();
    operator
        .row(&ket)
        .into_iter()
        .map(|(flips, element)| {
            if flips.is_empty() {
                return Complex64::new(element, 0.0);
            }
            let mut sites = cache.config.sites().to_vec();
            for i in flips {
                let (k, b) = site_spins(sites[i]);
                sites[i] = site_value(k.flipped(), b);
            }
            cache.ratio(&SpinConfiguration::from_raw(sites)) * element
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{init_params, log_derivatives};
    use crate::lattice::{build_dense_liouvillian, Variant};

    fn zz(n: usize, h: f64) -> ModelSpec {
        ModelSpec::new(Variant::Zz, n, 2.0, h).unwrap()
    }

    /// All weight on the all-down element.
    fn all_down(n: usize) -> LdmParameters {
        let mut p = LdmParameters::zeros(n, 1);
        p.a1_mut().fill(Complex64::new(-10.0, 0.0));
        p.a2_mut().fill(Complex64::new(10.0, 0.0));
        p
    }

    #[test]
    fn local_cost_vanishes_on_steady_state() {
        let s = SpinConfiguration::new(vec![-2]).unwrap();
        let c = local_cost(&all_down(1), &zz(1, 0.0), &s).unwrap();
        assert!(c.norm() < 1e-12, "{c}");
    }

    #[test]
    fn local_cost_with_uniform_amplitudes_is_row_sum() {
        let s = SpinConfiguration::new(vec![1]).unwrap();
        let c = local_cost(&LdmParameters::zeros(1, 2), &zz(1, 0.0), &s).unwrap();
        assert!((c - Complex64::new(-0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn local_cost_matches_dense_product() {
        let model = zz(2, 1.0);
        let p = init_params(2, 3, 0.4, 21).unwrap();
        let l = build_dense_liouvillian(&model).unwrap();
        let configs: Vec<_> = SpinConfiguration::enumerate(2).collect();
        let rho: Vec<Complex64> = configs
            .iter()
            .map(|s| crate::ansatz::log_rho(&p, s).unwrap().exp())
            .collect();
        for (r, s) in configs.iter().enumerate() {
            let l_rho: Complex64 = (0..16).map(|c| l[(r, c)] * rho[c]).sum();
            let expected = l_rho / rho[r];
            let got = local_cost(&p, &model, s).unwrap();
            assert!((got - expected).norm() < 1e-12 * (1.0 + expected.norm()));
        }
    }

    #[test]
    fn constant_costs_have_zero_variance() {
        let c = Complex64::new(0.3, -1.0);
        let est = estimate_cost(&[c; 5]).unwrap();
        assert_eq!(est.mean, c);
        assert_eq!(est.variance, 0.0);
        assert_eq!(est.abs_sq, c.norm_sqr());
        assert!(matches!(estimate_cost(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn exact_steady_state_cost_vanishes() {
        let mut p = all_down(2);
        p.a1_mut().fill(Complex64::new(-15.0, 0.0));
        p.a2_mut().fill(Complex64::new(15.0, 0.0));
        let (cost, _) = exact_estimates(&p, &zz(2, 0.0)).unwrap();
        assert!(cost.abs_sq <= 1e-20, "{}", cost.abs_sq);
    }

    #[test]
    fn degenerate_fisher_inputs() {
        let o = vec![vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.0)]];
        let sys = fisher_and_forces(&o, &[Complex64::new(3.0, 1.0)]).unwrap();
        assert!(sys.s.norm_l2() == 0.0 && sys.f.iter().all(|x| x.norm() == 0.0));

        let o = vec![o[0].clone(); 4];
        let costs: Vec<_> = (0..4).map(|k| Complex64::new(k as f64, 1.0)).collect();
        let sys = fisher_and_forces(&o, &costs).unwrap();
        assert!(sys.s.norm_l2() < 1e-15 && sys.f.iter().all(|x| x.norm() < 1e-15));
        assert!(fisher_and_forces(&[], &[]).is_err());
    }

    #[test]
    fn enumeration_matches_explicit_probability_formula() {
        let model = zz(1, 0.8);
        let p = init_params(1, 1, 0.5, 4).unwrap();
        let (cost, sys) = exact_estimates(&p, &model).unwrap();
        // independent evaluation straight from the definitions
        let configs: Vec<_> = SpinConfiguration::enumerate(1).collect();
        let amps: Vec<Complex64> = configs
            .iter()
            .map(|s| crate::ansatz::log_rho(&p, s).unwrap().exp())
            .collect();
        let z: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        let probs: Vec<f64> = amps.iter().map(|a| a.norm_sqr() / z).collect();
        let l = build_dense_liouvillian(&model).unwrap();
        let cl: Vec<Complex64> = (0..4)
            .map(|r| (0..4).map(|c| l[(r, c)] * amps[c]).sum::<Complex64>() / amps[r])
            .collect();
        let os: Vec<Vec<Complex64>> = configs.iter().map(|s| log_derivatives(&p, s).unwrap()).collect();
        let c_mean: Complex64 = (0..4).map(|k| cl[k] * probs[k]).sum();
        assert!((cost.mean - c_mean).norm() < 1e-12);
        let np = p.len();
        for i in 0..np {
            let oi: Complex64 = (0..4).map(|k| os[k][i] * probs[k]).sum();
            let f_i = (0..4).map(|k| os[k][i].conj() * cl[k] * probs[k]).sum::<Complex64>() - oi.conj() * c_mean;
            assert!((sys.f[i] - f_i).norm() < 1e-12);
            for j in 0..np {
                let oj: Complex64 = (0..4).map(|k| os[k][j] * probs[k]).sum();
                let s_ij = (0..4).map(|k| os[k][i].conj() * os[k][j] * probs[k]).sum::<Complex64>() - oi.conj() * oj;
                assert!((sys.s[(i, j)] - s_ij).norm() < 1e-12);
            }
        }
        assert!(sys.hermiticity_defect() < 1e-14);
    }

    #[test]
    fn observable_site_check() {
        assert!(Observable::SigmaZZ(2).check(3).is_err());
        assert!(Observable::SigmaX(2).check(3).is_ok());
        assert!(Observable::Identity.check(1).is_ok());
    }
}
