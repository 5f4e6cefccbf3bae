//! XX / hard-core-boson Hamiltonian and the vectorized Lindbladian with
//! uniform single-site pump (`σ⁺`) and loss (`σ⁻`).
//!
//! Vectorization is row-major: `|m⟩⟨n|` has full-space index `(m << L) | n`,
//! so `AρB ↦ (A ⊗ Bᵀ) vec(ρ)`.

use std::fmt;

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{
    check_sites, mask, GroupElement, Momentum, Parity, ReducedBasis, SpinConfiguration,
    SymmetrySector,
};
use crate::error::{Error, Result};

/// Entries below this magnitude are dropped at assembly.
pub const DROP_TOLERANCE: f64 = 1e-15;

/// Largest chain for which the full `4^L` Lindbladian may be assembled.
pub const MAX_FULL_SITES: u32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(rename = "L")]
    pub sites: u32,
    #[serde(rename = "J")]
    pub hopping: f64,
    pub gamma_p: f64,
    pub gamma_l: f64,
    /// Prefactor of the hopping term; 1 gives `-J Σ (b†b + h.c.)`, 4 the
    /// `-2J Σ (σˣσˣ + σʸσʸ)` normalization.
    #[serde(default = "default_scale")]
    pub hamiltonian_scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

impl ModelParams {
    pub fn new(sites: u32, hopping: f64, gamma_p: f64, gamma_l: f64) -> Self {
        ModelParams {
            sites,
            hopping,
            gamma_p,
            gamma_l,
            hamiltonian_scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.hamiltonian_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_sites(self.sites)?;
        for (name, v) in [("gamma_p", self.gamma_p), ("gamma_l", self.gamma_l)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.hopping.is_finite() {
            return Err(Error::invalid("J must be finite"));
        }
        if !(self.hamiltonian_scale.is_finite() && self.hamiltonian_scale > 0.0) {
            return Err(Error::invalid("hamiltonian_scale must be positive"));
        }
        if self.sites < 2 && self.hopping != 0.0 {
            return Err(Error::invalid("periodic hopping needs at least two sites"));
        }
        Ok(())
    }

    /// Amplitude of a single hop, `-J · scale`.
    pub fn hop_amplitude(&self) -> f64 {
        -self.hopping * self.hamiltonian_scale
    }

    /// Diagonal dissipative rate of `|m⟩⟨n|`: `-γp L + ½(γp - γl)(N_m + N_n)`.
    pub fn diagonal_decay(&self, ket_particles: u32, bra_particles: u32) -> f64 {
        -self.gamma_p * self.sites as f64
            + 0.5 * (self.gamma_p - self.gamma_l) * (ket_particles + bra_particles) as f64
    }
}

/// Calls `f` with the configuration produced by every hop on every bond
/// `(j, j+1 mod L)`, `j = 0..L`. On a two-site ring the bond is visited twice.
#[inline]
pub(crate) fn for_each_hop(bits: u32, sites: u32, mut f: impl FnMut(u32)) {
    if sites < 2 {
        return;
    }
    for j in 0..sites {
        let k = (j + 1) % sites;
        if ((bits >> j) ^ (bits >> k)) & 1 == 1 {
            f(bits ^ ((1 << j) | (1 << k)));
        }
    }
}

/// Real symmetric hopping Hamiltonian on all configurations or a fixed-`N` block.
#[derive(Clone, Debug)]
pub struct HamiltonianBlock {
    pub sites: u32,
    pub particles: Option<u32>,
    pub states: Vec<SpinConfiguration>,
    /// Sorted, duplicate-free `(row, col, value)`.
    pub entries: Vec<(usize, usize, f64)>,
}

impl HamiltonianBlock {
    pub fn dimension(&self) -> usize {
        self.states.len()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let n = self.dimension();
        let mut m = Mat::<f64>::zeros(n, n);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        if self.dimension() == 0 {
            return Ok(Vec::new());
        }
        self.to_dense()
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| Error::numerical(format!("hamiltonian eigensolver: {e:?}")))
    }

    /// Eigenvalues and orthonormal eigenvectors (columns).
    pub fn eigen(&self) -> Result<(Vec<f64>, Mat<f64>)> {
        let evd = self
            .to_dense()
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::numerical(format!("hamiltonian eigensolver: {e:?}")))?;
        let vals = (0..self.dimension()).map(|i| evd.S()[i]).collect();
        Ok((vals, evd.U().to_owned()))
    }
}

/// `H = -J·scale Σ_j (σ⁺_j σ⁻_{j+1} + σ⁻_j σ⁺_{j+1})` on a periodic chain.
pub fn build_xx_hamiltonian(
    sites: u32,
    hopping: f64,
    scale: f64,
    particles: Option<u32>,
) -> Result<HamiltonianBlock> {
    ModelParams::new(sites, hopping, 0.0, 0.0)
        .with_scale(scale)
        .validate()?;
    if let Some(n) = particles {
        if n > sites {
            return Err(Error::invalid(format!("particle number {n} exceeds {sites} sites")));
        }
    }
    let states: Vec<u32> = (0..(1u32 << sites))
        .filter(|b| particles.is_none_or(|n| b.count_ones() == n))
        .collect();
    let index = |bits: u32| states.binary_search(&bits).expect("hopping conserves particle number");
    let amp = -hopping * scale;
    let mut triplets = Vec::new();
    if amp != 0.0 {
        for (col, &bits) in states.iter().enumerate() {
            for_each_hop(bits, sites, |new| triplets.push((index(new), col, amp)));
        }
    }
    triplets.sort_by_key(|&(r, c, _)| (r, c));
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
    for (r, c, v) in triplets {
        match entries.last_mut() {
            Some(last) if (last.0, last.1) == (r, c) => last.2 += v,
            _ => entries.push((r, c, v)),
        }
    }
    entries.retain(|e| e.2.abs() >= DROP_TOLERANCE);
    Ok(HamiltonianBlock {
        sites,
        particles,
        states: states
            .into_iter()
            .map(|b| SpinConfiguration::from_raw(b, sites))
            .collect(),
        entries,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BasisTag {
    /// All `4^L` operators `|m⟩⟨n|`, index `(m << L) | n`.
    Full {
        #[serde(rename = "L")]
        sites: u32,
    },
    Sector {
        #[serde(rename = "L")]
        sites: u32,
        sector: SymmetrySector,
    },
}

impl BasisTag {
    pub fn sites(&self) -> u32 {
        match *self {
            BasisTag::Full { sites } | BasisTag::Sector { sites, .. } => sites,
        }
    }

    pub fn sector(&self) -> Option<SymmetrySector> {
        match *self {
            BasisTag::Full { .. } => None,
            BasisTag::Sector { sector, .. } => Some(sector),
        }
    }
}

impl fmt::Display for BasisTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisTag::Full { sites } => write!(f, "full_L{sites}"),
            BasisTag::Sector { sites, sector } => {
                write!(f, "L{sites}_M{}_k{}_p{}", sector.m, sector.k, sector.parity)
            }
        }
    }
}

/// Sparse Lindbladian block in coordinate format.
#[derive(Clone, Debug)]
pub struct SuperOperatorMatrix {
    pub dimension: usize,
    /// Row-major sorted `(row, col, value)`, no duplicates.
    pub entries: Vec<(usize, usize, Complex64)>,
    pub basis: BasisTag,
    pub params: ModelParams,
}

impl SuperOperatorMatrix {
    pub(crate) fn assemble(
        dimension: usize,
        mut triplets: Vec<(usize, usize, Complex64)>,
        basis: BasisTag,
        params: ModelParams,
    ) -> Result<Self> {
        triplets.par_sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut entries: Vec<(usize, usize, Complex64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match entries.last_mut() {
                Some(last) if (last.0, last.1) == (r, c) => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        entries.retain(|e| e.2.norm() >= DROP_TOLERANCE);
        if let Some(bad) = entries.iter().find(|e| !(e.2.re.is_finite() && e.2.im.is_finite())) {
            return Err(Error::numerical(format!(
                "non-finite matrix element at ({}, {})",
                bad.0, bad.1
            )));
        }
        Ok(SuperOperatorMatrix {
            dimension,
            entries,
            basis,
            params,
        })
    }

    pub fn trace(&self) -> Complex64 {
        self.entries
            .iter()
            .filter(|e| e.0 == e.1)
            .map(|e| e.2)
            .sum()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries
            .binary_search_by_key(&(row, col), |e| (e.0, e.1))
            .map(|i| self.entries[i].2)
            .unwrap_or_default()
    }

    pub fn to_dense(&self) -> Mat<Complex64> {
        let mut m = Mat::<Complex64>::zeros(self.dimension, self.dimension);
        for &(r, c, v) in &self.entries {
            m[(r, c)] = v;
        }
        m
    }

    /// `A x`.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.dimension);
        let mut y = vec![Complex64::default(); self.dimension];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// `xᵀ A`.
    pub fn apply_left(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.dimension);
        let mut y = vec![Complex64::default(); self.dimension];
        for &(r, c, v) in &self.entries {
            y[c] += x[r] * v;
        }
        y
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|e| e.2.norm()).fold(0.0, f64::max)
    }
}

/// Pushes column `(ket, bra)` of `𝓛` in the pair basis as `(row key, value)`.
pub(crate) fn lindblad_column(params: &ModelParams, key: u32, out: &mut Vec<(u32, Complex64)>) {
    let sites = params.sites;
    let ket = key >> sites;
    let bra = key & mask(sites);
    let amp = params.hop_amplitude();
    if amp != 0.0 {
        // -i (H ⊗ 1)
        for_each_hop(ket, sites, |k| out.push(((k << sites) | bra, Complex64::new(0.0, -amp))));
        // +i (1 ⊗ Hᵀ)
        for_each_hop(bra, sites, |b| out.push(((ket << sites) | b, Complex64::new(0.0, amp))));
    }
    if params.gamma_p != 0.0 {
        let empty = !ket & !bra & mask(sites);
        for j in 0..sites {
            if (empty >> j) & 1 == 1 {
                let k = ((ket | 1 << j) << sites) | (bra | 1 << j);
                out.push((k, Complex64::new(params.gamma_p, 0.0)));
            }
        }
    }
    if params.gamma_l != 0.0 {
        let full = ket & bra;
        for j in 0..sites {
            if (full >> j) & 1 == 1 {
                let k = ((ket & !(1 << j)) << sites) | (bra & !(1 << j));
                out.push((k, Complex64::new(params.gamma_l, 0.0)));
            }
        }
    }
    let diag = params.diagonal_decay(ket.count_ones(), bra.count_ones());
    if diag != 0.0 {
        out.push((key, Complex64::new(diag, 0.0)));
    }
}

/// The Lindbladian on all `4^L` basis operators.
pub fn build_liouvillian_full(params: &ModelParams) -> Result<SuperOperatorMatrix> {
    params.validate()?;
    if params.sites > MAX_FULL_SITES {
        return Err(Error::invalid(format!(
            "full Lindbladian of dimension 4^{} exceeds the supported size (L <= {MAX_FULL_SITES})",
            params.sites
        )));
    }
    let dim = 1usize << (2 * params.sites);
    let triplets: Vec<(usize, usize, Complex64)> = (0..dim as u32)
        .into_par_iter()
        .flat_map_iter(|col| {
            let mut out = Vec::new();
            lindblad_column(params, col, &mut out);
            out.into_iter().map(move |(r, v)| (r as usize, col as usize, v))
        })
        .collect();
    SuperOperatorMatrix::assemble(
        dim,
        triplets,
        BasisTag::Full {
            sites: params.sites,
        },
        *params,
    )
}

/// Whether the block carries a symmetry not resolved by `(M, k, parity)`:
/// at `γp = γl` the `M = 0` sector is invariant under a global spin flip.
pub fn has_residual_spin_flip(params: &ModelParams, sector: &SymmetrySector) -> bool {
    sector.m == 0 && params.gamma_p == params.gamma_l
}

/// The Lindbladian restricted to the symmetry-adapted states of `basis`.
///
/// For representative `a` with `𝓛|a⟩ = Σ_b L_ba |b⟩` and `h b = b̃`, the element
/// `⟨b̃|𝓛|a⟩` collects `L_ba χ(h) N_b̃ / N_a`.
pub fn build_liouvillian_sector(
    params: &ModelParams,
    basis: &ReducedBasis,
) -> Result<SuperOperatorMatrix> {
    params.validate()?;
    if basis.sites() != params.sites {
        return Err(Error::invalid(format!(
            "basis built for L={} but parameters have L={}",
            basis.sites(),
            params.sites
        )));
    }
    let sector = basis.sector();
    if has_residual_spin_flip(params, &sector) {
        log::warn!(
            "{}: gamma_p == gamma_l leaves a spin-flip symmetry in M=0; this block is reducible",
            basis.id()
        );
    }
    let triplets: Vec<(usize, usize, Complex64)> = (0..basis.dimension())
        .into_par_iter()
        .flat_map_iter(|col| {
            let mut raw = Vec::new();
            lindblad_column(params, basis.representatives[col].key(), &mut raw);
            let norm_col = basis.norms[col];
            raw.into_iter().filter_map(move |(key, v)| {
                let (row, chi) = basis.locate_key(key)?;
                Some((row, col, v * chi * (basis.norms[row] / norm_col)))
            })
        })
        .collect();
    SuperOperatorMatrix::assemble(
        basis.dimension(),
        triplets,
        BasisTag::Sector {
            sites: params.sites,
            sector,
        },
        *params,
    )
}

/// Max-norms of commutators of the full Lindbladian with its symmetry superoperators.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SymmetryReport {
    /// `‖[𝓛, 𝓝]‖_max`, `𝓝 = n ⊗ 1 - 1 ⊗ nᵀ`.
    pub super_number: f64,
    /// `‖[𝓛, 𝒯]‖_max` for simultaneous translation of ket and bra.
    pub translation: f64,
    /// `‖[𝓛, 𝒫]‖_max` for simultaneous reflection.
    pub reflection: f64,
    /// `‖[𝓛, 𝒳]‖_max` for the global spin flip; vanishes only at `γp = γl`.
    pub spin_flip: f64,
    /// `‖[H, n]‖_max`.
    pub hamiltonian_number: f64,
    /// `max_j ‖[σ⁺_j, n]‖_max`; nonzero, so particle number is not a strong symmetry.
    pub jump_number: f64,
}

impl SymmetryReport {
    pub fn block_symmetries_hold(&self, tol: f64) -> bool {
        self.super_number <= tol && self.translation <= tol && self.reflection <= tol
    }
}

fn max_permuted_difference(
    a: &SuperOperatorMatrix,
    perm: impl Fn(usize) -> usize,
) -> f64 {
    let mut permuted: Vec<(usize, usize, Complex64)> =
        a.entries.iter().map(|&(r, c, v)| (perm(r), perm(c), v)).collect();
    permuted.sort_unstable_by_key(|&(r, c, _)| (r, c));
    max_sparse_difference(&a.entries, &permuted)
}

/// `max |A - B|` over the union of both sparsity patterns; inputs sorted row-major.
pub(crate) fn max_sparse_difference(
    a: &[(usize, usize, Complex64)],
    b: &[(usize, usize, Complex64)],
) -> f64 {
    let (mut i, mut j, mut worst) = (0, 0, 0.0f64);
    while i < a.len() || j < b.len() {
        let ka = a.get(i).map(|e| (e.0, e.1));
        let kb = b.get(j).map(|e| (e.0, e.1));
        let d = match (ka, kb) {
            (Some(x), Some(y)) if x == y => {
                i += 1;
                j += 1;
                (a[i - 1].2 - b[j - 1].2).norm()
            }
            (Some(x), Some(y)) if x < y => {
                i += 1;
                a[i - 1].2.norm()
            }
            (Some(_), None) => {
                i += 1;
                a[i - 1].2.norm()
            }
            _ => {
                j += 1;
                b[j - 1].2.norm()
            }
        };
        worst = worst.max(d);
    }
    worst
}

/// Check the conserved quantities used for block diagonalization (`L <= 6`).
pub fn verify_symmetry_algebra(params: &ModelParams) -> Result<SymmetryReport> {
    if params.sites > 6 {
        return Err(Error::invalid("symmetry verification supports L <= 6"));
    }
    let full = build_liouvillian_full(params)?;
    let sites = params.sites;
    let m_of = |key: usize| {
        let key = key as u32;
        (key >> sites).count_ones() as f64 - (key & mask(sites)).count_ones() as f64
    };
    let super_number = full
        .entries
        .iter()
        .map(|&(r, c, v)| v.norm() * (m_of(c) - m_of(r)).abs())
        .fold(0.0, f64::max);
    let shift = GroupElement {
        shift: 1 % sites,
        reflected: false,
    };
    let mirror = GroupElement {
        shift: 0,
        reflected: true,
    };
    let translation = max_permuted_difference(&full, |k| shift.act_key(k as u32, sites) as usize);
    let reflection = max_permuted_difference(&full, |k| mirror.act_key(k as u32, sites) as usize);
    let all = mask(2 * sites) as usize;
    let spin_flip = max_permuted_difference(&full, |k| k ^ all);

    let ham = build_xx_hamiltonian(sites, params.hopping, params.hamiltonian_scale, None)?;
    let n_of = |i: usize| ham.states[i].particles() as f64;
    let hamiltonian_number = ham
        .entries
        .iter()
        .map(|&(r, c, v)| (v * (n_of(c) - n_of(r))).abs())
        .fold(0.0, f64::max);
    // σ⁺_j |b⟩ = |b + j⟩ when j is empty: [σ⁺_j, n] has elements (N_b - N_{b+j}) = -1.
    let jump_number = (0..(1u32 << sites))
        .flat_map(|b| (0..sites).filter(move |&j| (b >> j) & 1 == 0).map(move |j| (b, b | 1 << j)))
        .map(|(b, up)| (b.count_ones() as f64 - up.count_ones() as f64).abs())
        .fold(0.0, f64::max);

    Ok(SymmetryReport {
        super_number,
        translation,
        reflection,
        spin_flip,
        hamiltonian_number,
        jump_number,
    })
}

/// Sector descriptor for a full-basis restriction to `M` (no momentum reduction).
pub fn pair_sector(m: i32) -> SymmetrySector {
    SymmetrySector::new(m, Momentum::All, Parity::None)
}
