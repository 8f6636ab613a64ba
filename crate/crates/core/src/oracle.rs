//! Dense reference calculations for small chains.
//!
//! The Liouvillian here is assembled from Kronecker products of explicit
//! `2^N × 2^N` operators, independently of the row generator in
//! [`crate::lattice`], so the two can check each other.

use faer::{Mat, Side};
use num_complex::Complex64;

use crate::ansatz::{log_derivatives, log_rho, LdmParameters};
use crate::error::{Error, Result};
use crate::estimators::{Observable, SrSystem};
use crate::lattice::{ModelSpec, Spin, SpinConfiguration, Variant, DENSE_SITE_LIMIT};

/// Largest chain whose density matrix is rebuilt from a machine.
pub const RECONSTRUCT_SITE_LIMIT: usize = 5;

/// Eigenvalue magnitude below which a Liouvillian mode counts as stationary.
pub const STATIONARY_TOL: f64 = 1e-8;
/// Two eigenvalues this close to zero make the steady state ambiguous.
pub const DEGENERACY_TOL: f64 = 1e-10;
/// Eigenvalues down to `-PSD_CLIP` are clipped to zero before fidelities.
pub const PSD_CLIP: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A `2^N × 2^N` density matrix.
#[derive(Clone, Debug)]
pub struct DenseState {
    pub n_sites: usize,
    pub rho: Mat<Complex64>,
}

impl DenseState {
    pub fn new(n_sites: usize, rho: Mat<Complex64>) -> Result<Self> {
        let dim = 1usize << n_sites;
        if rho.nrows() != dim || rho.ncols() != dim {
            return Err(Error::Domain(format!(
                "{}×{} matrix for {n_sites} sites",
                rho.nrows(),
                rho.ncols()
            )));
        }
        Ok(Self { n_sites, rho })
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim()).map(|i| self.rho[(i, i)]).sum()
    }

    /// Divides by the trace.
    pub fn normalized(&self) -> Self {
        let t = self.trace();
        Self {
            n_sites: self.n_sites,
            rho: Mat::from_fn(self.dim(), self.dim(), |i, j| self.rho[(i, j)] / t),
        }
    }

    /// `(ρ + ρ†)/2`.
    pub fn hermitized(&self) -> Self {
        Self {
            n_sites: self.n_sites,
            rho: Mat::from_fn(self.dim(), self.dim(), |i, j| {
                0.5 * (self.rho[(i, j)] + self.rho[(j, i)].conj())
            }),
        }
    }

    /// Row-major vectorization, indexed like [`SpinConfiguration::liouville_index`].
    pub fn to_vector(&self) -> Vec<Complex64> {
        let d = self.dim();
        (0..d * d).map(|k| self.rho[(k / d, k % d)]).collect()
    }

    /// Product state `⊗ ρ_site` of a single-site `2×2` matrix.
    pub fn product(n_sites: usize, site: [[Complex64; 2]; 2]) -> Self {
        let local = Mat::from_fn(2, 2, |i, j| site[i][j]);
        let mut rho = Mat::from_fn(1, 1, |_, _| ONE);
        for _ in 0..n_sites {
            rho = kron(&rho, &local);
        }
        Self { n_sites, rho }
    }

    /// Pure state `|ψ⟩⟨ψ|`.
    pub fn pure(n_sites: usize, psi: &[Complex64]) -> Result<Self> {
        let d = psi.len();
        Self::new(n_sites, Mat::from_fn(d, d, |i, j| psi[i] * psi[j].conj()))
    }
}

pub fn kron(a: &Mat<Complex64>, b: &Mat<Complex64>) -> Mat<Complex64> {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    Mat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

fn scaled(m: &Mat<Complex64>, factor: f64) -> Mat<Complex64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * factor)
}

fn identity(d: usize) -> Mat<Complex64> {
    Mat::from_fn(d, d, |i, j| if i == j { ONE } else { ZERO })
}

fn pauli(name: char) -> Mat<Complex64> {
    let m = match name {
        'x' => [[0.0, 1.0], [1.0, 0.0]],
        'z' => [[1.0, 0.0], [0.0, -1.0]],
        // σ⁻ = |↓⟩⟨↑| with |↑⟩ = index 0
        '-' => [[0.0, 0.0], [1.0, 0.0]],
        _ => unreachable!(),
    };
    Mat::from_fn(2, 2, |i, j| Complex64::new(m[i][j], 0.0))
}

/// `op` acting on `sites` (consecutive) of an `n`-site chain.
fn embed(n: usize, first: usize, ops: &[Mat<Complex64>]) -> Mat<Complex64> {
    let mut out = Mat::from_fn(1, 1, |_, _| ONE);
    let mut site = 0;
    while site < n {
        if site == first {
            for op in ops {
                out = kron(&out, op);
            }
            site += ops.len();
        } else {
            out = kron(&out, &identity(2));
            site += 1;
        }
    }
    out
}

fn check_dense(model: &ModelSpec) -> Result<()> {
    model.validate()?;
    if model.n_sites > DENSE_SITE_LIMIT {
        return Err(Error::SizeLimit {
            what: "exact diagonalization",
            n: model.n_sites,
            limit: DENSE_SITE_LIMIT,
        });
    }
    Ok(())
}

/// Dense Hamiltonian of the chain.
pub fn hamiltonian(model: &ModelSpec) -> Result<Mat<Complex64>> {
    check_dense(model)?;
    let n = model.n_sites;
    let (bond, field) = match model.variant {
        Variant::Zz => ('z', 'x'),
        Variant::Xx => ('x', 'z'),
    };
    let mut h = Mat::<Complex64>::zeros(1 << n, 1 << n);
    for i in 0..n.saturating_sub(1) {
        h += scaled(&embed(n, i, &[pauli(bond), pauli(bond)]), 0.25 * model.coupling);
    }
    for i in 0..n {
        h += scaled(&embed(n, i, &[pauli(field)]), 0.5 * model.field);
    }
    Ok(h)
}

/// Dense Liouvillian from Kronecker products:
/// `L = −i(H⊗1 − 1⊗Hᵀ) + Σ_k [A_k⊗A_k* − ½(1⊗(A_k†A_k)ᵀ + (A_k†A_k)⊗1)]`.
pub fn kron_liouvillian(model: &ModelSpec) -> Result<Mat<Complex64>> {
    let h = hamiltonian(model)?;
    let n = model.n_sites;
    let id = identity(1 << n);
    let commutator = kron(&h, &id) - kron(&id, &h.transpose().to_owned());
    let mut l = Mat::from_fn(commutator.nrows(), commutator.ncols(), |i, j| {
        Complex64::new(0.0, -1.0) * commutator[(i, j)]
    });
    for i in 0..n {
        let a = scaled(&embed(n, i, &[pauli('-')]), model.gamma.sqrt());
        let ada = a.adjoint() * &a;
        l += kron(&a, &a.conjugate().to_owned());
        l -= scaled(&(kron(&id, &ada.transpose().to_owned()) + kron(&ada, &id)), 0.5);
    }
    Ok(l)
}

/// Eigenvalues of the dense Liouvillian, sorted by decreasing real part.
pub fn liouvillian_spectrum(model: &ModelSpec) -> Result<Vec<Complex64>> {
    let l = kron_liouvillian(model)?;
    let mut ev = l.eigenvalues().map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    ev.sort_by(|a, b| b.re.total_cmp(&a.re));
    Ok(ev)
}

/// Stationary state from the eigenvector of `L` with eigenvalue zero.
pub fn steady_state_ed(model: &ModelSpec) -> Result<DenseState> {
    let l = kron_liouvillian(model)?;
    let evd = l.eigen().map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let values: Vec<Complex64> = evd.S().column_vector().iter().copied().collect();
    let best = (0..values.len())
        .max_by(|&a, &b| values[a].re.total_cmp(&values[b].re))
        .ok_or_else(|| Error::Decomposition("empty spectrum".into()))?;
    if values[best].norm() > STATIONARY_TOL {
        return Err(Error::NoSteadyState(values[best].re));
    }
    let near_zero = values.iter().filter(|v| v.norm() < DEGENERACY_TOL).count();
    if near_zero > 1 {
        return Err(Error::AmbiguousSteadyState {
            count: near_zero,
            tol: DEGENERACY_TOL,
        });
    }
    let d = 1usize << model.n_sites;
    let u = evd.U();
    let rho = Mat::from_fn(d, d, |i, j| u[(i * d + j, best)]);
    Ok(DenseState::new(model.n_sites, rho)?.hermitized().normalized())
}

/// Density matrix represented by a machine, normalized by its trace.
pub fn reconstruct_density(params: &LdmParameters) -> Result<DenseState> {
    let n = params.n_visible();
    if n > RECONSTRUCT_SITE_LIMIT {
        return Err(Error::SizeLimit {
            what: "density reconstruction",
            n,
            limit: RECONSTRUCT_SITE_LIMIT,
        });
    }
    let configs: Vec<SpinConfiguration> = SpinConfiguration::enumerate(n).collect();
    let logs: Vec<Complex64> = configs.iter().map(|s| log_rho(params, s)).collect::<Result<_>>()?;
    // rescale by the largest diagonal element so the trace stays representable
    let shift = configs
        .iter()
        .zip(&logs)
        .filter(|(s, _)| s.is_diagonal())
        .map(|(_, l)| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let d = 1usize << n;
    let mut rho = Mat::<Complex64>::zeros(d, d);
    for (s, l) in configs.iter().zip(&logs) {
        rho[(s.ket_index(), s.bra_index())] = (l - shift).exp();
    }
    Ok(DenseState::new(n, rho)?.normalized())
}

/// `Tr[Aρ] / Tr[ρ]`.
pub fn expectation(state: &DenseState, operator: Observable) -> Result<Complex64> {
    operator.check(state.n_sites)?;
    let n = state.n_sites;
    let mut total = ZERO;
    for d in 0..state.dim() {
        let spins: Vec<Spin> = SpinConfiguration::from_indices(n, d, d).ket();
        for (flips, element) in operator.row(&spins) {
            let m = flips.iter().fold(d, |m, &i| m ^ (1 << (n - 1 - i)));
            total += state.rho[(m, d)] * element;
        }
    }
    Ok(total / state.trace())
}

/// Partial transpose over the sites in `subsystem`.
pub fn partial_transpose(state: &DenseState, subsystem: &[usize]) -> Result<Mat<Complex64>> {
    let n = state.n_sites;
    if subsystem.is_empty() || subsystem.len() >= n {
        return Err(Error::Domain(
            "the bipartition must be a non-empty proper subset".into(),
        ));
    }
    let mut mask = 0usize;
    for &i in subsystem {
        if i >= n {
            return Err(Error::Domain(format!("site {i} outside a {n}-site chain")));
        }
        let bit = 1 << (n - 1 - i);
        if mask & bit != 0 {
            return Err(Error::Domain(format!("site {i} listed twice")));
        }
        mask |= bit;
    }
    let d = state.dim();
    Ok(Mat::from_fn(d, d, |r, c| {
        let (r2, c2) = ((r & !mask) | (c & mask), (c & !mask) | (r & mask));
        state.rho[(r2, c2)]
    }))
}

/// `(‖ρ^{T_A}‖₁ − 1)/2` for the trace-normalized state.
pub fn negativity(state: &DenseState, subsystem: &[usize]) -> Result<f64> {
    let pt = partial_transpose(&state.normalized(), subsystem)?;
    let sv = pt
        .singular_values()
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    Ok((sv.iter().sum::<f64>() - 1.0) / 2.0)
}

/// Left/right cuts of an open chain: `{0}`, `{0,1}`, …, `{0..N−2}`.
pub fn contiguous_bipartitions(n_sites: usize) -> Vec<Vec<usize>> {
    (1..n_sites).map(|k| (0..k).collect()).collect()
}

/// `Tr ρ²` of the trace-normalized state.
pub fn purity(state: &DenseState) -> f64 {
    let s = state.normalized();
    let d = s.dim();
    let mut total = ZERO;
    for i in 0..d {
        for j in 0..d {
            total += s.rho[(i, j)] * s.rho[(j, i)];
        }
    }
    total.re
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhysicalityMetrics {
    pub min_real_eigenvalue: f64,
    pub sum_abs_imag_eigenvalues: f64,
    /// `‖ρ − ρ†‖_F / ‖ρ‖_F`
    pub hermiticity_defect: f64,
}

/// Spectral checks of a possibly non-Hermitian, trace-normalized matrix.
pub fn physicality_metrics(state: &DenseState) -> Result<PhysicalityMetrics> {
    let s = state.normalized();
    let ev = s
        .rho
        .eigenvalues()
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let adjoint = s.rho.adjoint().to_owned();
    let defect = (&s.rho - &adjoint).norm_l2() / s.rho.norm_l2();
    Ok(PhysicalityMetrics {
        min_real_eigenvalue: ev.iter().map(|z| z.re).fold(f64::INFINITY, f64::min),
        sum_abs_imag_eigenvalues: ev.iter().map(|z| z.im.abs()).sum(),
        hermiticity_defect: defect,
    })
}

/// Eigen-decomposition of a Hermitian PSD matrix with small negative
/// eigenvalues clipped to zero.
fn psd_eigen(m: &Mat<Complex64>) -> Result<(Vec<f64>, Mat<Complex64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let mut values = Vec::with_capacity(m.nrows());
    for v in evd.S().column_vector().iter() {
        if v.re < -PSD_CLIP {
            return Err(Error::NotPsd(v.re));
        }
        values.push(v.re.max(0.0));
    }
    Ok((values, evd.U().to_owned()))
}

/// Uhlmann fidelity `(Tr √(√a b √a))²` of the Hermitized, normalized inputs.
pub fn fidelity(a: &DenseState, b: &DenseState) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Domain(format!("dimensions {} and {} differ", a.dim(), b.dim())));
    }
    let a = a.hermitized().normalized().hermitized();
    let b = b.hermitized().normalized().hermitized();
    let (va, ua) = psd_eigen(&a.rho)?;
    psd_eigen(&b.rho)?;
    let d = a.dim();
    let sqrt_a = Mat::from_fn(d, d, |i, j| {
        (0..d)
            .map(|k| ua[(i, k)] * va[k].sqrt() * ua[(j, k)].conj())
            .sum::<Complex64>()
    });
    let inner = &sqrt_a * &b.rho * &sqrt_a;
    let inner = DenseState {
        n_sites: a.n_sites,
        rho: inner,
    }
    .hermitized();
    let (vi, _) = psd_eigen(&inner.rho)?;
    let f = vi.iter().map(|v| v.sqrt()).sum::<f64>().powi(2);
    Ok(f.clamp(0.0, 1.0 + 1e-9))
}

/// Nearest physical state: Hermitized, negative eigenvalues set to zero,
/// trace renormalized. Used before comparing trained machines, whose
/// reconstruction is only approximately positive.
pub fn project_psd(state: &DenseState) -> Result<DenseState> {
    let h = state.hermitized().normalized().hermitized();
    let evd = h
        .rho
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let values: Vec<f64> = evd.S().column_vector().iter().map(|v| v.re.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::NotPsd(total));
    }
    let u = evd.U();
    let d = h.dim();
    let rho = Mat::from_fn(d, d, |i, j| {
        (0..d)
            .map(|k| u[(i, k)] * (values[k] / total) * u[(j, k)].conj())
            .sum::<Complex64>()
    });
    Ok(DenseState {
        n_sites: state.n_sites,
        rho,
    }
    .hermitized())
}

/// Cost and SR system by dense algebra on the full vector `|ρ⟩⟩`, with
/// `D_k = ∂_k|ρ⟩⟩` and `n = ⟨⟨ρ|ρ⟩⟩`:
/// `C = ⟨⟨ρ|L|ρ⟩⟩/n`, `S = D†D/n − (D†ρ)(ρ†D)/n²`, `f = D†Lρ/n − (D†ρ)C/n`.
pub fn dense_sr_system(params: &LdmParameters, model: &ModelSpec) -> Result<(Complex64, SrSystem)> {
    let l = kron_liouvillian(model)?;
    let n = params.n_visible();
    if n != model.n_sites {
        return Err(Error::Domain(format!(
            "machine has {n} sites, model has {}",
            model.n_sites
        )));
    }
    let dim = 1usize << (2 * n);
    let configs: Vec<SpinConfiguration> = (0..dim)
        .map(|k| SpinConfiguration::from_liouville_index(n, k))
        .collect();
    let rho: Vec<Complex64> = configs
        .iter()
        .map(|s| Ok(log_rho(params, s)?.exp()))
        .collect::<Result<_>>()?;
    let d: Vec<Vec<Complex64>> = configs
        .iter()
        .zip(&rho)
        .map(|(s, r)| Ok(log_derivatives(params, s)?.into_iter().map(|o| o * r).collect()))
        .collect::<Result<_>>()?;
    let l_rho: Vec<Complex64> = (0..dim).map(|i| (0..dim).map(|j| l[(i, j)] * rho[j]).sum()).collect();
    let norm: f64 = rho.iter().map(|r| r.norm_sqr()).sum();
    let cost = rho.iter().zip(&l_rho).map(|(r, lr)| r.conj() * lr).sum::<Complex64>() / norm;
    let p = params.len();
    let d_rho: Vec<Complex64> = (0..p)
        .map(|k| (0..dim).map(|x| d[x][k].conj() * rho[x]).sum())
        .collect();
    let s = Mat::from_fn(p, p, |i, j| {
        let dd: Complex64 = (0..dim).map(|x| d[x][i].conj() * d[x][j]).sum();
        dd / norm - d_rho[i] * d_rho[j].conj() / (norm * norm)
    });
    let f = (0..p)
        .map(|k| {
            let dl: Complex64 = (0..dim).map(|x| d[x][k].conj() * l_rho[x]).sum();
            dl / norm - d_rho[k] * cost / norm
        })
        .collect();
    Ok((cost, SrSystem { s, f }))
}
