//! Dissipative transverse-field Ising chains in Liouville space.
//!
//! A density matrix element `ρ_{m,n}` of an `N`-site spin-1/2 chain is
//! labelled by a [`SpinConfiguration`]: one value per site out of
//! `{2, 1, -1, -2}`, encoding the pair (ket spin, bra spin) at that site:
//!
//! | value | ket | bra |
//! |-------|-----|-----|
//! |  2    |  ↑  |  ↑  |
//! |  1    |  ↑  |  ↓  |
//! | -1    |  ↓  |  ↑  |
//! | -2    |  ↓  |  ↓  |
//!
//! Conventions used throughout the crate: `σᶻ|↑⟩ = +|↑⟩`, the lowering
//! operator is `σ⁻ = |↓⟩⟨↑|`, and in dense Hilbert-space indices site 0 is
//! the most significant bit with bit value 1 meaning ↓. Density matrices are
//! vectorized row-major, so the Liouville index of `ρ_{m,n}` is `m·2^N + n`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest chain for which dense `4^N × 4^N` superoperators are built.
pub const DENSE_SITE_LIMIT: usize = 6;

/// Which of the two Ising chains to simulate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// `H = J/4 Σ σᶻσᶻ + h/2 Σ σˣ`
    #[serde(rename = "ZZ")]
    Zz,
    /// `H = J/4 Σ σˣσˣ + h/2 Σ σᶻ`
    #[serde(rename = "XX")]
    Xx,
}

/// Open chain of `n_sites` spins with uniform coupling, transverse field and
/// on-site decay `A_i = √γ σ⁻_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: Variant,
    pub n_sites: usize,
    /// Ising coupling `J`.
    pub coupling: f64,
    /// Transverse field `h`.
    pub field: f64,
    /// Decay rate `γ`; the unit of all energies.
    #[serde(default = "unit_rate")]
    pub gamma: f64,
}

fn unit_rate() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn new(variant: Variant, n_sites: usize, coupling: f64, field: f64) -> Result<Self> {
        let spec = Self {
            variant,
            n_sites,
            coupling,
            field,
            gamma: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_field(&self, field: f64) -> Self {
        Self { field, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(Error::Domain("a chain needs at least one site".into()));
        }
        if self.n_sites > 63 {
            return Err(Error::Domain(format!(
                "{} sites do not fit a 64-bit basis index",
                self.n_sites
            )));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(Error::Domain(format!(
                "decay rate must be positive, got {}",
                self.gamma
            )));
        }
        if !self.coupling.is_finite() || !self.field.is_finite() {
            return Err(Error::Domain("coupling and field must be finite".into()));
        }
        Ok(())
    }
}

/// A single spin-1/2 basis state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub fn flipped(self) -> Self {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }

    /// Eigenvalue of `σᶻ`.
    pub fn z(self) -> f64 {
        match self {
            Spin::Up => 1.0,
            Spin::Down => -1.0,
        }
    }
}

pub(crate) fn site_value(ket: Spin, bra: Spin) -> i8 {
    match (ket, bra) {
        (Spin::Up, Spin::Up) => 2,
        (Spin::Up, Spin::Down) => 1,
        (Spin::Down, Spin::Up) => -1,
        (Spin::Down, Spin::Down) => -2,
    }
}

pub(crate) fn site_spins(value: i8) -> (Spin, Spin) {
    match value {
        2 => (Spin::Up, Spin::Up),
        1 => (Spin::Up, Spin::Down),
        -1 => (Spin::Down, Spin::Up),
        -2 => (Spin::Down, Spin::Down),
        _ => unreachable!("site values are validated on construction"),
    }
}

/// The four admissible site values.
pub const SITE_VALUES: [i8; 4] = [2, 1, -1, -2];

/// Label of one vectorized density-matrix element.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinConfiguration(Vec<i8>);

impl SpinConfiguration {
    pub fn new(sites: Vec<i8>) -> Result<Self> {
        if let Some(bad) = sites.iter().find(|v| !SITE_VALUES.contains(v)) {
            return Err(Error::Domain(format!("site value {bad} is not one of ±1, ±2")));
        }
        Ok(Self(sites))
    }

    /// Builds the configuration for the element `ρ_{ket,bra}`.
    pub fn from_braket(ket: &[Spin], bra: &[Spin]) -> Result<Self> {
        if ket.len() != bra.len() {
            return Err(Error::Domain(format!(
                "ket has {} sites but bra has {}",
                ket.len(),
                bra.len()
            )));
        }
        Ok(Self(ket.iter().zip(bra).map(|(&k, &b)| site_value(k, b)).collect()))
    }

    /// Configuration of the element `ρ_{m,n}` with dense basis indices `m`, `n`.
    pub fn from_indices(n_sites: usize, ket: usize, bra: usize) -> Self {
        let spin = |index: usize, site: usize| {
            if (index >> (n_sites - 1 - site)) & 1 == 1 {
                Spin::Down
            } else {
                Spin::Up
            }
        };
        Self((0..n_sites).map(|i| site_value(spin(ket, i), spin(bra, i))).collect())
    }

    /// Inverse of [`SpinConfiguration::liouville_index`].
    pub fn from_liouville_index(n_sites: usize, index: usize) -> Self {
        let dim = 1usize << n_sites;
        Self::from_indices(n_sites, index / dim, index % dim)
    }

    /// Every configuration of `n_sites`, in Liouville-index order.
    pub fn enumerate(n_sites: usize) -> impl Iterator<Item = SpinConfiguration> {
        (0..1usize << (2 * n_sites)).map(move |k| Self::from_liouville_index(n_sites, k))
    }

    /// Every diagonal configuration of `n_sites`, in basis-index order.
    pub fn enumerate_diagonal(n_sites: usize) -> impl Iterator<Item = SpinConfiguration> {
        (0..1usize << n_sites).map(move |k| Self::from_indices(n_sites, k, k))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sites(&self) -> &[i8] {
        &self.0
    }

    pub fn ket(&self) -> Vec<Spin> {
        self.0.iter().map(|&v| site_spins(v).0).collect()
    }

    pub fn bra(&self) -> Vec<Spin> {
        self.0.iter().map(|&v| site_spins(v).1).collect()
    }

    /// Dense Hilbert-space index of the ket string.
    pub fn ket_index(&self) -> usize {
        bits_to_index(self.0.iter().map(|&v| v < 0))
    }

    /// Dense Hilbert-space index of the bra string.
    pub fn bra_index(&self) -> usize {
        bits_to_index(self.0.iter().map(|&v| v == 1 || v == -2))
    }

    /// Row-major Liouville index `m·2^N + n`.
    pub fn liouville_index(&self) -> usize {
        (self.ket_index() << self.len()) | self.bra_index()
    }

    /// True when ket and bra strings coincide (every site is ±2).
    pub fn is_diagonal(&self) -> bool {
        self.0.iter().all(|v| v.abs() == 2)
    }

    /// Configuration of the transposed element `ρ_{n,m}`.
    pub fn swapped(&self) -> Self {
        Self(self.0.iter().map(|&v| if v.abs() == 1 { -v } else { v }).collect())
    }

    pub(crate) fn with_site(&self, site: usize, value: i8) -> Self {
        let mut next = self.0.clone();
        next[site] = value;
        Self(next)
    }

    pub(crate) fn from_raw(sites: Vec<i8>) -> Self {
        debug_assert!(sites.iter().all(|v| SITE_VALUES.contains(v)));
        Self(sites)
    }

    fn ket_flipped(&self, sites: &[usize]) -> Self {
        let mut next = self.0.clone();
        for &i in sites {
            let (k, b) = site_spins(next[i]);
            next[i] = site_value(k.flipped(), b);
        }
        Self(next)
    }

    fn bra_flipped(&self, sites: &[usize]) -> Self {
        let mut next = self.0.clone();
        for &i in sites {
            let (k, b) = site_spins(next[i]);
            next[i] = site_value(k, b.flipped());
        }
        Self(next)
    }
}

fn bits_to_index(bits: impl Iterator<Item = bool>) -> usize {
    bits.fold(0usize, |acc, down| (acc << 1) | usize::from(down))
}

/// Splits a configuration into its (ket, bra) spin strings.
pub fn config_to_braket(s: &SpinConfiguration) -> (Vec<Spin>, Vec<Spin>) {
    (s.ket(), s.bra())
}

/// Non-zero matrix elements `⟨⟨s|L|s′⟩⟩` of one row of the Liouvillian.
#[derive(Clone, Debug, PartialEq)]
pub struct LiouvillianRow {
    pub source: SpinConfiguration,
    /// The first entry is always the diagonal element `s′ = s`, even when it
    /// vanishes; all further targets are distinct and carry non-zero weight.
    pub entries: Vec<(SpinConfiguration, Complex64)>,
}

impl LiouvillianRow {
    fn push(&mut self, target: SpinConfiguration, amplitude: Complex64) {
        if amplitude == Complex64::new(0.0, 0.0) {
            return;
        }
        match self.entries.iter_mut().find(|(t, _)| *t == target) {
            Some((_, a)) => *a += amplitude,
            None => self.entries.push((target, amplitude)),
        }
    }

    /// Sum of all matrix elements in the row.
    pub fn sum(&self) -> Complex64 {
        self.entries.iter().map(|(_, a)| a).sum()
    }
}

/// Diagonal of the Hamiltonian in the computational basis for one spin string.
fn hamiltonian_diagonal(model: &ModelSpec, spins: &[Spin]) -> f64 {
    match model.variant {
        Variant::Zz => 0.25 * model.coupling * spins.windows(2).map(|w| w[0].z() * w[1].z()).sum::<f64>(),
        Variant::Xx => 0.5 * model.field * spins.iter().map(|s| s.z()).sum::<f64>(),
    }
}

/// Generates row `s` of the vectorized Liouvillian term by term.
///
/// Commutator terms contribute `-i(H_{m,m'}δ_{n,n'} − δ_{m,m'}H_{n',n})`, the
/// dissipators contribute `γ` for the jump `(↓,↓) → (↑,↑)` and `−γ/2` for every
/// ↑ in the ket or bra string.
pub fn liouvillian_row(model: &ModelSpec, s: &SpinConfiguration) -> LiouvillianRow {
    debug_assert_eq!(model.n_sites, s.len());
    let n = s.len();
    let ket = s.ket();
    let bra = s.bra();
    let i = Complex64::new(0.0, 1.0);

    let hd = hamiltonian_diagonal(model, &ket) - hamiltonian_diagonal(model, &bra);
    let ups = ket.iter().chain(&bra).filter(|&&sp| sp == Spin::Up).count() as f64;
    let diagonal = -i * hd - 0.5 * model.gamma * ups;

    let mut row = LiouvillianRow {
        source: s.clone(),
        entries: Vec::with_capacity(3 * n + 1),
    };
    row.entries.push((s.clone(), diagonal));

    match model.variant {
        Variant::Zz => {
            let hx = 0.5 * model.field;
            for site in 0..n {
                row.push(s.ket_flipped(&[site]), -i * hx);
                row.push(s.bra_flipped(&[site]), i * hx);
            }
        }
        Variant::Xx => {
            let jx = 0.25 * model.coupling;
            for site in 0..n.saturating_sub(1) {
                row.push(s.ket_flipped(&[site, site + 1]), -i * jx);
                row.push(s.bra_flipped(&[site, site + 1]), i * jx);
            }
        }
    }

    for (site, &v) in s.sites().iter().enumerate() {
        if v == -2 {
            row.push(s.with_site(site, 2), Complex64::new(model.gamma, 0.0));
        }
    }
    row
}

/// Dense `4^N × 4^N` Liouvillian assembled from [`liouvillian_row`].
pub fn build_dense_liouvillian(model: &ModelSpec) -> Result<faer::Mat<Complex64>> {
    model.validate()?;
    let n = model.n_sites;
    if n > DENSE_SITE_LIMIT {
        return Err(Error::SizeLimit {
            what: "a dense Liouvillian",
            n,
            limit: DENSE_SITE_LIMIT,
        });
    }
    let dim = 1usize << (2 * n);
    let mut l = faer::Mat::<Complex64>::zeros(dim, dim);
    for r in 0..dim {
        let row = liouvillian_row(model, &SpinConfiguration::from_liouville_index(n, r));
        for (target, amp) in row.entries {
            l[(r, target.liouville_index())] += amp;
        }
    }
    Ok(l)
}
