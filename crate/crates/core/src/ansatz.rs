//! Liouville density machine.
//!
//! The amplitude of the density-matrix element labelled by `s` is
//!
//! ```text
//! ρ(s) = exp(Σ_j a1_j s_j + a2_j s_j² + a3_j s_j³) · Π_i 2 cosh θ_i
//! θ_i  = b_i + Σ_j U_ij s_j + V_ij s_j² + W_ij s_j³
//! ```
//!
//! with complex parameters. Everything is evaluated in log space.

use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::SpinConfiguration;

/// Complex parameters of a machine with `n` visible and `m` hidden units.
///
/// Stored flat in the order `[a1, a2, a3, b, U, V, W]`, the weight matrices
/// row-major with shape `m × n`. [`log_derivatives`] uses the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct LdmParameters {
    n: usize,
    m: usize,
    data: Vec<Complex64>,
}

/// Number of parameters of an `n`-visible, `m`-hidden machine: `3n + m + 3nm`.
pub const fn parameter_count(n: usize, m: usize) -> usize {
    3 * n + m + 3 * n * m
}

/// Hidden units for a hidden-unit density `beta = M/N`.
pub fn hidden_units(n: usize, beta: f64) -> usize {
    (beta * n as f64).round() as usize
}

impl LdmParameters {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            data: vec![Complex64::new(0.0, 0.0); parameter_count(n, m)],
        }
    }

    pub fn from_flat(n: usize, m: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != parameter_count(n, m) {
            return Err(Error::Domain(format!(
                "expected {} parameters for n={n}, m={m}, got {}",
                parameter_count(n, m),
                data.len()
            )));
        }
        Ok(Self { n, m, data })
    }

    pub fn n_visible(&self) -> usize {
        self.n
    }

    pub fn n_hidden(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    fn block(&self, k: usize) -> &[Complex64] {
        let (n, m) = (self.n, self.m);
        match k {
            0..=2 => &self.data[k * n..(k + 1) * n],
            3 => &self.data[3 * n..3 * n + m],
            _ => {
                let start = 3 * n + m + (k - 4) * n * m;
                &self.data[start..start + n * m]
            }
        }
    }

    fn block_mut(&mut self, k: usize) -> &mut [Complex64] {
        let (n, m) = (self.n, self.m);
        let range = match k {
            0..=2 => k * n..(k + 1) * n,
            3 => 3 * n..3 * n + m,
            _ => {
                let start = 3 * n + m + (k - 4) * n * m;
                start..start + n * m
            }
        };
        &mut self.data[range]
    }

    pub fn a1(&self) -> &[Complex64] {
        self.block(0)
    }
    pub fn a2(&self) -> &[Complex64] {
        self.block(1)
    }
    pub fn a3(&self) -> &[Complex64] {
        self.block(2)
    }
    pub fn b(&self) -> &[Complex64] {
        self.block(3)
    }
    /// `U` row-major, `m × n`.
    pub fn u(&self) -> &[Complex64] {
        self.block(4)
    }
    pub fn v(&self) -> &[Complex64] {
        self.block(5)
    }
    pub fn w(&self) -> &[Complex64] {
        self.block(6)
    }
    pub fn a1_mut(&mut self) -> &mut [Complex64] {
        self.block_mut(0)
    }
    pub fn a2_mut(&mut self) -> &mut [Complex64] {
        self.block_mut(1)
    }
    pub fn a3_mut(&mut self) -> &mut [Complex64] {
        self.block_mut(2)
    }
    pub fn b_mut(&mut self) -> &mut [Complex64] {
        self.block_mut(3)
    }
    pub fn u_mut(&mut self) -> &mut [Complex64] {
        self.block_mut(4)
    }
    pub fn v_mut(&mut self) -> &mut [Complex64] {
        self.block_mut(5)
    }
    pub fn w_mut(&mut self) -> &mut [Complex64] {
        self.block_mut(6)
    }

    /// `self + delta`, elementwise over the flat vector.
    pub fn shifted(&self, delta: &[Complex64]) -> Result<Self> {
        if delta.len() != self.data.len() {
            return Err(Error::Domain(format!(
                "update has {} entries, machine has {}",
                delta.len(),
                self.data.len()
            )));
        }
        Ok(Self {
            n: self.n,
            m: self.m,
            data: self.data.iter().zip(delta).map(|(p, d)| p + d).collect(),
        })
    }

    fn check(&self, s: &SpinConfiguration) -> Result<()> {
        if s.len() != self.n {
            return Err(Error::Domain(format!(
                "configuration has {} sites, machine has {} visible units",
                s.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// Hidden-unit arguments `θ` for configuration `s`.
    pub fn hidden_arguments(&self, s: &SpinConfiguration) -> Result<HiddenArguments> {
        self.check(s)?;
        Ok(self.theta_unchecked(s.sites()))
    }

    fn theta_unchecked(&self, s: &[i8]) -> HiddenArguments {
        let n = self.n;
        let (u, v, w) = (self.u(), self.v(), self.w());
        let theta = self
            .b()
            .iter()
            .enumerate()
            .map(|(i, &bi)| {
                let row = i * n;
                s.iter().enumerate().fold(bi, |acc, (j, &sj)| {
                    let x = f64::from(sj);
                    acc + u[row + j] * x + v[row + j] * (x * x) + w[row + j] * (x * x * x)
                })
            })
            .collect();
        HiddenArguments(theta)
    }

    fn visible_term(&self, s: &[i8]) -> Complex64 {
        let (a1, a2, a3) = (self.a1(), self.a2(), self.a3());
        s.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (j, &sj)| {
            let x = f64::from(sj);
            acc + a1[j] * x + a2[j] * (x * x) + a3[j] * (x * x * x)
        })
    }

    fn log_rho_with(&self, s: &[i8], theta: &HiddenArguments) -> Complex64 {
        self.visible_term(s) + theta.0.iter().map(|&t| log_two_cosh(t)).sum::<Complex64>()
    }

    /// Moves `theta` from configuration `from` to `to` by touching only the
    /// sites where they differ.
    fn update_theta(&self, theta: &mut [Complex64], from: &[i8], to: &[i8]) {
        let n = self.n;
        let (u, v, w) = (self.u(), self.v(), self.w());
        for (j, (&a, &b)) in from.iter().zip(to).enumerate() {
            if a == b {
                continue;
            }
            let (xa, xb) = (f64::from(a), f64::from(b));
            let (d1, d2, d3) = (xb - xa, xb * xb - xa * xa, xb * xb * xb - xa * xa * xa);
            for (i, t) in theta.iter_mut().enumerate() {
                let k = i * n + j;
                *t += u[k] * d1 + v[k] * d2 + w[k] * d3;
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let pairs = |xs: &[Complex64]| xs.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>();
        let matrix = |xs: &[Complex64]| {
            if self.n == 0 {
                vec![Vec::new(); self.m]
            } else {
                xs.chunks(self.n).map(pairs).collect::<Vec<_>>()
            }
        };
        Checkpoint {
            n: self.n,
            m: self.m,
            a1: pairs(self.a1()),
            a2: pairs(self.a2()),
            a3: pairs(self.a3()),
            b: pairs(self.b()),
            u: matrix(self.u()),
            v: matrix(self.v()),
            w: matrix(self.w()),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        let (n, m) = (cp.n, cp.m);
        let vector = |name: &str, xs: &[[f64; 2]], len: usize| -> Result<Vec<Complex64>> {
            if xs.len() != len {
                return Err(Error::Domain(format!(
                    "checkpoint field {name} has length {}, expected {len}",
                    xs.len()
                )));
            }
            Ok(xs.iter().map(|p| Complex64::new(p[0], p[1])).collect())
        };
        let matrix = |name: &str, rows: &[Vec<[f64; 2]>]| -> Result<Vec<Complex64>> {
            if rows.len() != m {
                return Err(Error::Domain(format!(
                    "checkpoint field {name} has {} rows, expected {m}",
                    rows.len()
                )));
            }
            let mut out = Vec::with_capacity(n * m);
            for row in rows {
                out.extend(vector(name, row, n)?);
            }
            Ok(out)
        };
        let mut data = Vec::with_capacity(parameter_count(n, m));
        data.extend(vector("a1", &cp.a1, n)?);
        data.extend(vector("a2", &cp.a2, n)?);
        data.extend(vector("a3", &cp.a3, n)?);
        data.extend(vector("b", &cp.b, m)?);
        data.extend(matrix("u", &cp.u)?);
        data.extend(matrix("v", &cp.v)?);
        data.extend(matrix("w", &cp.w)?);
        Self::from_flat(n, m, data)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_checkpoint(&serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// JSON layout of a parameter checkpoint; complex numbers are `[re, im]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub n: usize,
    pub m: usize,
    pub a1: Vec<[f64; 2]>,
    pub a2: Vec<[f64; 2]>,
    pub a3: Vec<[f64; 2]>,
    pub b: Vec<[f64; 2]>,
    pub u: Vec<Vec<[f64; 2]>>,
    pub v: Vec<Vec<[f64; 2]>>,
    pub w: Vec<Vec<[f64; 2]>>,
}

/// Arguments `θ_i` of the hidden-unit cosh factors.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenArguments(pub Vec<Complex64>);

/// `ln(2 cosh z)` without overflow for large `|Re z|`.
pub fn log_two_cosh(z: Complex64) -> Complex64 {
    // 2 cosh z = e^{±z} (1 + e^{∓2z}); pick the sign that keeps the exponent bounded
    let z = if z.re < 0.0 { -z } else { z };
    z + (Complex64::new(1.0, 0.0) + (-2.0 * z).exp()).ln()
}

/// `tanh z` without overflow for large `|Re z|`.
pub fn stable_tanh(z: Complex64) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    if z.re < 0.0 {
        return -stable_tanh(-z);
    }
    let e = (-2.0 * z).exp();
    (one - e) / (one + e)
}

/// `ln ρ(s)`.
pub fn log_rho(params: &LdmParameters, s: &SpinConfiguration) -> Result<Complex64> {
    let theta = params.hidden_arguments(s)?;
    Ok(params.log_rho_with(s.sites(), &theta))
}

/// `ρ(s_new) / ρ(s_old)`.
pub fn amplitude_ratio(
    params: &LdmParameters,
    s_new: &SpinConfiguration,
    s_old: &SpinConfiguration,
) -> Result<Complex64> {
    let old = CachedAmplitude::new(params, s_old)?;
    params.check(s_new)?;
    Ok((old.log_rho_of(s_new) - old.log_rho).exp())
}

/// Logarithmic derivatives `O_k(s) = ∂_k ln ρ(s)` in flat parameter order.
pub fn log_derivatives(params: &LdmParameters, s: &SpinConfiguration) -> Result<Vec<Complex64>> {
    let theta = params.hidden_arguments(s)?;
    Ok(log_derivatives_with(params, s.sites(), &theta))
}

pub(crate) fn log_derivatives_with(params: &LdmParameters, s: &[i8], theta: &HiddenArguments) -> Vec<Complex64> {
    let (n, m) = (params.n, params.m);
    let powers: Vec<[f64; 3]> = s
        .iter()
        .map(|&v| {
            let x = f64::from(v);
            [x, x * x, x * x * x]
        })
        .collect();
    let tanh: Vec<Complex64> = theta.0.iter().map(|&t| stable_tanh(t)).collect();

    let mut out = Vec::with_capacity(parameter_count(n, m));
    for p in 0..3 {
        out.extend(powers.iter().map(|x| Complex64::new(x[p], 0.0)));
    }
    out.extend_from_slice(&tanh);
    for p in 0..3 {
        for t in &tanh {
            out.extend(powers.iter().map(|x| t * x[p]));
        }
    }
    out
}

/// A configuration together with its hidden arguments and log-amplitude, so
/// that amplitudes of nearby configurations can be obtained incrementally.
#[derive(Clone, Debug)]
pub struct CachedAmplitude<'a> {
    params: &'a LdmParameters,
    pub config: SpinConfiguration,
    pub theta: HiddenArguments,
    pub log_rho: Complex64,
}

impl<'a> CachedAmplitude<'a> {
    pub fn new(params: &'a LdmParameters, config: &SpinConfiguration) -> Result<Self> {
        let theta = params.hidden_arguments(config)?;
        let log_rho = params.log_rho_with(config.sites(), &theta);
        Ok(Self {
            params,
            config: config.clone(),
            theta,
            log_rho,
        })
    }

    /// `ln ρ(target)`, updating only the hidden arguments of changed sites.
    pub fn log_rho_of(&self, target: &SpinConfiguration) -> Complex64 {
        let mut theta = self.theta.0.clone();
        self.params
            .update_theta(&mut theta, self.config.sites(), target.sites());
        let theta = HiddenArguments(theta);
        self.params.log_rho_with(target.sites(), &theta)
    }

    /// Like [`CachedAmplitude::log_rho_of`] but also returns the new arguments.
    pub fn evaluate(&self, target: &SpinConfiguration) -> (Complex64, HiddenArguments) {
        let mut theta = self.theta.0.clone();
        self.params
            .update_theta(&mut theta, self.config.sites(), target.sites());
        let theta = HiddenArguments(theta);
        (self.params.log_rho_with(target.sites(), &theta), theta)
    }

    /// `ρ(target) / ρ(config)`.
    pub fn ratio(&self, target: &SpinConfiguration) -> Complex64 {
        (self.log_rho_of(target) - self.log_rho).exp()
    }

    /// Replaces the cached configuration with a previously evaluated one.
    pub fn move_to(&mut self, config: SpinConfiguration, log_rho: Complex64, theta: HiddenArguments) {
        self.config = config;
        self.log_rho = log_rho;
        self.theta = theta;
    }

    pub fn log_derivatives(&self) -> Vec<Complex64> {
        log_derivatives_with(self.params, self.config.sites(), &self.theta)
    }
}

/// Random parameters with independent Gaussian real and imaginary parts of
/// standard deviation `scale`.
pub fn init_params(n: usize, m: usize, scale: f64, seed: u64) -> Result<LdmParameters> {
    if !scale.is_finite() || scale < 0.0 {
        return Err(Error::Domain(format!(
            "initialization scale must be non-negative, got {scale}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, scale).map_err(|e| Error::Domain(e.to_string()))?;
    let data = (0..parameter_count(n, m))
        .map(|_| {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            Complex64::new(re, im)
        })
        .collect();
    LdmParameters::from_flat(n, m, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(v: &[i8]) -> SpinConfiguration {
        SpinConfiguration::new(v.to_vec()).unwrap()
    }

    /// Direct product formula, no logs.
    fn rho_direct(p: &LdmParameters, s: &[i8]) -> Complex64 {
        let (n, m) = (p.n_visible(), p.n_hidden());
        let mut vis = Complex64::new(0.0, 0.0);
        for (j, &sj) in s.iter().enumerate().take(n) {
            let x = f64::from(sj);
            vis += p.a1()[j] * x + p.a2()[j] * x.powi(2) + p.a3()[j] * x.powi(3);
        }
        let mut prod = vis.exp();
        for i in 0..m {
            let mut t = p.b()[i];
            for (j, &sj) in s.iter().enumerate().take(n) {
                let x = f64::from(sj);
                t += p.u()[i * n + j] * x + p.v()[i * n + j] * x.powi(2) + p.w()[i * n + j] * x.powi(3);
            }
            prod *= 2.0 * t.cosh();
        }
        prod
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(parameter_count(6, hidden_units(6, 1.0)), 132);
        assert_eq!(parameter_count(6, hidden_units(6, 2.0)), 246);
        assert_eq!(hidden_units(16, 1.4), 22);
        assert_eq!(parameter_count(16, 22), 1126);
        assert_eq!(init_params(3, 5, 0.1, 1).unwrap().len(), parameter_count(3, 5));
    }

    #[test]
    fn zero_parameters_give_uniform_amplitude() {
        let p = LdmParameters::zeros(3, 4);
        for s in SpinConfiguration::enumerate(3).step_by(5) {
            let lr = log_rho(&p, &s).unwrap();
            assert_relative_eq!(lr.re, 4.0 * 2f64.ln(), epsilon = 1e-14);
            assert_eq!(lr.im, 0.0);
        }
    }

    #[test]
    fn visible_bias_only_factorizes() {
        let c = Complex64::new(0.3, -0.2);
        let mut p = LdmParameters::zeros(3, 2);
        p.a1_mut().fill(c);
        let s = cfg(&[2, -1, 1]);
        let expected = c * 2.0 + 2.0 * 2f64.ln();
        assert!((log_rho(&p, &s).unwrap() - expected).norm() < 1e-14);
    }

    #[test]
    fn log_rho_matches_direct_product() {
        let p = init_params(3, 3, 0.3, 7).unwrap();
        for s in SpinConfiguration::enumerate(3) {
            let direct = rho_direct(&p, s.sites());
            let via_log = log_rho(&p, &s).unwrap().exp();
            assert!((direct - via_log).norm() <= 1e-12 * direct.norm(), "{s:?}");
        }
    }

    #[test]
    fn log_cosh_is_stable() {
        let z = Complex64::new(800.0, 0.3);
        let v = log_two_cosh(z);
        assert!(v.is_finite());
        assert_relative_eq!(v.re, 800.0, epsilon = 1e-12);
        assert!((log_two_cosh(-z) - v).norm() < 1e-12);
        let small = Complex64::new(0.4, -1.1);
        assert!((log_two_cosh(small) - (2.0 * small.cosh()).ln()).norm() < 1e-14);
        assert!((stable_tanh(small) - small.tanh()).norm() < 1e-14);
        assert!((stable_tanh(z) - Complex64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn ratio_identities() {
        let p = init_params(1, 2, 0.5, 11).unwrap();
        let all: Vec<_> = SpinConfiguration::enumerate(1).collect();
        assert_eq!(all.len(), 4);
        for a in &all {
            assert!((amplitude_ratio(&p, a, a).unwrap() - 1.0).norm() < 1e-15);
            for b in &all {
                let r = amplitude_ratio(&p, a, b).unwrap();
                let direct = rho_direct(&p, a.sites()) / rho_direct(&p, b.sites());
                assert!((r - direct).norm() <= 1e-12 * direct.norm());
                let back = amplitude_ratio(&p, b, a).unwrap();
                assert!((r * back - 1.0).norm() < 1e-12);
            }
        }
        let z = LdmParameters::zeros(2, 3);
        assert_eq!(
            amplitude_ratio(&z, &cfg(&[2, 1]), &cfg(&[-1, -2])).unwrap(),
            Complex64::new(1.0, 0.0)
        );
    }

    #[test]
    fn incremental_ratio_matches_full_evaluation() {
        let p = init_params(4, 6, 0.4, 3).unwrap();
        let s = cfg(&[2, -1, 1, -2]);
        let cache = CachedAmplitude::new(&p, &s).unwrap();
        for t in SpinConfiguration::enumerate(4).step_by(3) {
            let full = log_rho(&p, &t).unwrap() - cache.log_rho;
            let inc = cache.log_rho_of(&t) - cache.log_rho;
            assert!((full.exp() - inc.exp()).norm() <= 1e-12 * full.exp().norm());
        }
    }

    #[test]
    fn zero_parameter_derivatives() {
        let p = LdmParameters::zeros(2, 3);
        let s = cfg(&[-2, 1]);
        let o = log_derivatives(&p, &s).unwrap();
        assert_eq!(o.len(), parameter_count(2, 3));
        let expect_a = [-2.0, 1.0, 4.0, 1.0, -8.0, 1.0];
        for (k, e) in expect_a.iter().enumerate() {
            assert_eq!(o[k], Complex64::new(*e, 0.0));
        }
        assert!(o[6..].iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = LdmParameters::zeros(2, 1);
        assert!(log_rho(&p, &cfg(&[2])).is_err());
        assert!(amplitude_ratio(&p, &cfg(&[2, 2, 2]), &cfg(&[2, 2])).is_err());
        assert!(LdmParameters::from_flat(2, 1, vec![]).is_err());
    }

    #[test]
    fn init_is_deterministic_and_scaled() {
        assert_eq!(init_params(3, 4, 0.01, 5).unwrap(), init_params(3, 4, 0.01, 5).unwrap());
        assert_ne!(init_params(3, 4, 0.01, 5).unwrap(), init_params(3, 4, 0.01, 6).unwrap());
        assert_eq!(init_params(2, 2, 0.0, 9).unwrap(), LdmParameters::zeros(2, 2));
        assert!(init_params(2, 2, -1.0, 9).is_err());
    }

    #[test]
    fn checkpoint_rejects_bad_shapes() {
        let p = init_params(2, 3, 0.1, 1).unwrap();
        let mut cp = p.to_checkpoint();
        cp.u.pop();
        assert!(LdmParameters::from_checkpoint(&cp).is_err());
        let mut cp = p.to_checkpoint();
        cp.a2.push([0.0, 0.0]);
        assert!(LdmParameters::from_checkpoint(&cp).is_err());
    }
}
