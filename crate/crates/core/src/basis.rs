//! Operator basis `|m⟩⟨n|` of a periodic chain and its symmetry-adapted sectors.
//!
//! Basis operators are pairs of occupation bitmasks. The super-particle number
//! `M = N_ket - N_bra` is conserved by the Lindbladian, as are simultaneous
//! translation and reflection of ket and bra. A [`ReducedBasis`] holds one
//! normalized symmetrized state per compatible group orbit.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported chain length; a pair of configurations packs into a `u32`.
pub const MAX_SITES: u32 = 16;

/// Occupation bitmask of a chain of `sites` sites. Bit `j` set means site `j` is occupied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpinConfiguration {
    bits: u16,
    sites: u8,
}

impl SpinConfiguration {
    pub fn new(bits: u32, sites: u32) -> Result<Self> {
        check_sites(sites)?;
        if bits & !mask(sites) != 0 {
            return Err(Error::invalid(format!(
                "bits {bits:#b} exceed a chain of {sites} sites"
            )));
        }
        Ok(Self::from_raw(bits, sites))
    }

    pub(crate) fn from_raw(bits: u32, sites: u32) -> Self {
        debug_assert!(sites <= MAX_SITES && bits & !mask(sites) == 0);
        SpinConfiguration {
            bits: bits as u16,
            sites: sites as u8,
        }
    }

    pub fn bits(self) -> u32 {
        self.bits as u32
    }

    pub fn sites(self) -> u32 {
        self.sites as u32
    }

    pub fn particles(self) -> u32 {
        self.bits.count_ones()
    }

    pub fn is_occupied(self, site: u32) -> bool {
        (self.bits >> site) & 1 == 1
    }
}

impl fmt::Display for SpinConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:0width$b}", self.bits, width = self.sites as usize)
    }
}

pub(crate) fn check_sites(sites: u32) -> Result<()> {
    if sites == 0 || sites > MAX_SITES {
        return Err(Error::invalid(format!(
            "chain length must be in 1..={MAX_SITES}, got {sites}"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn mask(sites: u32) -> u32 {
    (1u32 << sites) - 1
}

#[inline]
pub(crate) fn rotate_bits(bits: u32, shift: u32, sites: u32) -> u32 {
    if shift == 0 {
        return bits;
    }
    ((bits << shift) | (bits >> (sites - shift))) & mask(sites)
}

#[inline]
pub(crate) fn reverse_bits(bits: u32, sites: u32) -> u32 {
    bits.reverse_bits() >> (32 - sites)
}

/// Cyclic left rotation of the occupation word by `shift` sites.
pub fn translate(c: SpinConfiguration, shift: u32) -> Result<SpinConfiguration> {
    if shift >= c.sites() {
        return Err(Error::invalid(format!(
            "translation {shift} out of range for {} sites",
            c.sites()
        )));
    }
    Ok(SpinConfiguration::from_raw(
        rotate_bits(c.bits(), shift, c.sites()),
        c.sites(),
    ))
}

/// Spatial reflection `j -> L-1-j`.
pub fn reflect(c: SpinConfiguration) -> SpinConfiguration {
    SpinConfiguration::from_raw(reverse_bits(c.bits(), c.sites()), c.sites())
}

/// The basis operator `|ket⟩⟨bra|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairedBasisElement {
    pub ket: SpinConfiguration,
    pub bra: SpinConfiguration,
}

impl PairedBasisElement {
    pub fn new(ket: SpinConfiguration, bra: SpinConfiguration) -> Result<Self> {
        if ket.sites() != bra.sites() {
            return Err(Error::invalid("ket and bra live on different chains"));
        }
        Ok(PairedBasisElement { ket, bra })
    }

    pub(crate) fn from_key(key: u32, sites: u32) -> Self {
        PairedBasisElement {
            ket: SpinConfiguration::from_raw(key >> sites, sites),
            bra: SpinConfiguration::from_raw(key & mask(sites), sites),
        }
    }

    /// Packed `(ket << L) | bra`; ordering by key is lexicographic in `(ket, bra)`.
    pub fn key(&self) -> u32 {
        (self.ket.bits() << self.ket.sites()) | self.bra.bits()
    }

    pub fn sites(&self) -> u32 {
        self.ket.sites()
    }

    pub fn ket_particles(&self) -> u32 {
        self.ket.particles()
    }

    pub fn bra_particles(&self) -> u32 {
        self.bra.particles()
    }

    pub fn super_particle_number(&self) -> i32 {
        self.ket_particles() as i32 - self.bra_particles() as i32
    }
}

impl PartialOrd for PairedBasisElement {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PairedBasisElement {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.ket.bits(), self.bra.bits()).cmp(&(other.ket.bits(), other.bra.bits()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Momentum {
    /// No translation reduction.
    All,
    /// Momentum `2πk/L`.
    #[serde(untagged)]
    Index(u32),
}

impl fmt::Display for Momentum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Momentum::All => f.write_str("all"),
            Momentum::Index(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    None,
    Even,
    Odd,
}

impl Parity {
    pub fn sign(self) -> Option<f64> {
        match self {
            Parity::None => None,
            Parity::Even => Some(1.0),
            Parity::Odd => Some(-1.0),
        }
    }
}

impl std::str::FromStr for Momentum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" | "ALL" | "All" => Ok(Momentum::All),
            v => v
                .parse()
                .map(Momentum::Index)
                .map_err(|_| Error::invalid(format!("momentum must be an index or 'all', got '{v}'"))),
        }
    }
}

impl std::str::FromStr for Parity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "+" | "+1" | "1" | "even" => Ok(Parity::Even),
            "-" | "-1" | "odd" => Ok(Parity::Odd),
            "none" | "0" | "" => Ok(Parity::None),
            v => Err(Error::invalid(format!("parity must be +, - or none, got '{v}'"))),
        }
    }
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parity::None => "none",
            Parity::Even => "+",
            Parity::Odd => "-",
        })
    }
}

/// Quantum numbers of a Lindbladian block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymmetrySector {
    #[serde(rename = "M")]
    pub m: i32,
    pub k: Momentum,
    pub parity: Parity,
}

impl SymmetrySector {
    pub fn new(m: i32, k: Momentum, parity: Parity) -> Self {
        SymmetrySector { m, k, parity }
    }

    /// Only the super-particle number is resolved.
    pub fn unreduced(m: i32) -> Self {
        SymmetrySector::new(m, Momentum::All, Parity::None)
    }

    pub fn validate(&self, sites: u32) -> Result<()> {
        check_sites(sites)?;
        if self.m.unsigned_abs() > sites {
            return Err(Error::invalid(format!(
                "super-particle number {} outside [-{sites}, {sites}]",
                self.m
            )));
        }
        match (self.k, self.parity) {
            (Momentum::Index(k), _) if k >= sites => Err(Error::invalid(format!(
                "momentum index {k} out of range for {sites} sites"
            ))),
            (Momentum::All, Parity::Even | Parity::Odd) => Err(Error::invalid(
                "parity requires a momentum sector (0 or L/2)",
            )),
            (Momentum::Index(k), Parity::Even | Parity::Odd) if !is_reflection_momentum(k, sites) => {
                Err(Error::invalid(format!(
                    "parity is only a good quantum number at momentum 0 or pi, got k={k} for L={sites}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Every `(k, parity)` block at fixed `M`; together they partition the `M` sector.
    pub fn momentum_blocks(sites: u32, m: i32) -> Vec<SymmetrySector> {
        let mut out = Vec::new();
        for k in 0..sites {
            if is_reflection_momentum(k, sites) {
                out.push(SymmetrySector::new(m, Momentum::Index(k), Parity::Even));
                out.push(SymmetrySector::new(m, Momentum::Index(k), Parity::Odd));
            } else {
                out.push(SymmetrySector::new(m, Momentum::Index(k), Parity::None));
            }
        }
        out
    }
}

impl fmt::Display for SymmetrySector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M={} k={} parity={}", self.m, self.k, self.parity)
    }
}

fn is_reflection_momentum(k: u32, sites: u32) -> bool {
    k == 0 || 2 * k == sites
}

/// `T^shift P^reflected`: reflect first (if set), then translate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupElement {
    pub shift: u32,
    pub reflected: bool,
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement {
        shift: 0,
        reflected: false,
    };

    #[inline]
    pub(crate) fn act_bits(self, bits: u32, sites: u32) -> u32 {
        let b = if self.reflected {
            reverse_bits(bits, sites)
        } else {
            bits
        };
        rotate_bits(b, self.shift, sites)
    }

    #[inline]
    pub(crate) fn act_key(self, key: u32, sites: u32) -> u32 {
        let ket = self.act_bits(key >> sites, sites);
        let bra = self.act_bits(key & mask(sites), sites);
        (ket << sites) | bra
    }

    pub fn apply(self, p: PairedBasisElement) -> PairedBasisElement {
        PairedBasisElement::from_key(self.act_key(p.key(), p.sites()), p.sites())
    }
}

/// Group elements used to reduce `sector`; identity first.
pub(crate) fn symmetry_group(sites: u32, sector: &SymmetrySector) -> Vec<GroupElement> {
    let reflections: &[bool] = match sector.parity {
        Parity::None => &[false],
        _ => &[false, true],
    };
    match sector.k {
        Momentum::All => vec![GroupElement::IDENTITY],
        Momentum::Index(_) => reflections
            .iter()
            .flat_map(|&reflected| (0..sites).map(move |shift| GroupElement { shift, reflected }))
            .collect(),
    }
}

/// One-dimensional character `e^{-2πi k r / L} · p^s` of `T^r P^s`.
pub(crate) fn character(sites: u32, sector: &SymmetrySector, g: GroupElement) -> Complex64 {
    let phase = match sector.k {
        Momentum::All => Complex64::new(1.0, 0.0),
        Momentum::Index(k) => {
            let num = (k * g.shift) % sites;
            if num == 0 {
                Complex64::new(1.0, 0.0)
            } else if 2 * num == sites {
                Complex64::new(-1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, -2.0 * PI * num as f64 / sites as f64)
            }
        }
    };
    match (g.reflected, sector.parity.sign()) {
        (true, Some(p)) => phase * p,
        _ => phase,
    }
}

fn configurations_by_particles(sites: u32) -> Vec<Vec<u32>> {
    let mut by = vec![Vec::new(); sites as usize + 1];
    for bits in 0..(1u32 << sites) {
        by[bits.count_ones() as usize].push(bits);
    }
    by
}

fn pair_sector_keys(sites: u32, m: i32) -> Vec<u32> {
    let by = configurations_by_particles(sites);
    let mut keys = Vec::new();
    for ket in 0..(1u32 << sites) {
        let nb = ket.count_ones() as i32 - m;
        if nb < 0 || nb > sites as i32 {
            continue;
        }
        keys.extend(by[nb as usize].iter().map(|&bra| (ket << sites) | bra));
    }
    keys
}

/// All `|m⟩⟨n|` with `N_m - N_n = M`, ordered by `(ket, bra)`.
pub fn enumerate_pair_sector(sites: u32, m: i32) -> Result<Vec<PairedBasisElement>> {
    SymmetrySector::unreduced(m).validate(sites)?;
    Ok(pair_sector_keys(sites, m)
        .into_iter()
        .map(|key| PairedBasisElement::from_key(key, sites))
        .collect())
}

/// Smallest key in the orbit of `key` and the group element reaching it.
#[inline]
fn min_image(key: u32, sites: u32, group: &[GroupElement]) -> (u32, GroupElement) {
    let mut best = (key, GroupElement::IDENTITY);
    for &g in group {
        let k = g.act_key(key, sites);
        if k < best.0 {
            best = (k, g);
        }
    }
    best
}

/// Lexicographically smallest element of the orbit of `p` under the sector's
/// symmetry group, together with the group element `g` such that `g(p)` is it.
pub fn orbit_representative(
    p: PairedBasisElement,
    sector: &SymmetrySector,
) -> Result<(PairedBasisElement, GroupElement)> {
    let sites = p.sites();
    sector.validate(sites)?;
    if p.super_particle_number() != sector.m {
        return Err(Error::invalid(format!(
            "pair has M={} but sector has M={}",
            p.super_particle_number(),
            sector.m
        )));
    }
    let group = symmetry_group(sites, sector);
    let (key, g) = min_image(p.key(), sites, &group);
    Ok((PairedBasisElement::from_key(key, sites), g))
}

fn translation_period(key: u32, sites: u32) -> u32 {
    (1..sites)
        .find(|&r| GroupElement { shift: r, reflected: false }.act_key(key, sites) == key)
        .unwrap_or(sites)
}

fn reflection_closes_orbit(key: u32, sites: u32) -> bool {
    let reflected = GroupElement { shift: 0, reflected: true }.act_key(key, sites);
    (0..sites).any(|r| GroupElement { shift: r, reflected: false }.act_key(key, sites) == reflected)
}

/// Un-normalized projection `Σ_g χ(g) g|key⟩`, merged per distinct image.
fn projected_components(
    key: u32,
    sites: u32,
    group: &[GroupElement],
    chars: &[Complex64],
) -> Vec<(u32, Complex64)> {
    let mut comps: Vec<(u32, Complex64)> = group
        .iter()
        .zip(chars)
        .map(|(&g, &c)| (g.act_key(key, sites), c))
        .collect();
    comps.sort_by_key(|&(k, _)| k);
    let mut merged: Vec<(u32, Complex64)> = Vec::with_capacity(comps.len());
    for (k, c) in comps {
        match merged.last_mut() {
            Some(last) if last.0 == k => last.1 += c,
            _ => merged.push((k, c)),
        }
    }
    merged
}

const NORM_SQR_CUTOFF: f64 = 1e-9;

/// Orthonormal symmetry-adapted basis of one sector.
#[derive(Clone, Debug)]
pub struct ReducedBasis {
    sites: u32,
    sector: SymmetrySector,
    pub representatives: Vec<PairedBasisElement>,
    /// Translation period of each representative's orbit.
    pub orbit_periods: Vec<u32>,
    /// Whether reflection maps the representative's translation orbit onto itself.
    pub parity_flags: Vec<bool>,
    /// `‖Σ_g χ(g) g|a⟩‖`; the basis state is the projection divided by this.
    pub norms: Vec<f64>,
    keys: Vec<u32>,
    group: Vec<GroupElement>,
    characters: Vec<Complex64>,
}

impl ReducedBasis {
    pub fn sites(&self) -> u32 {
        self.sites
    }

    pub fn sector(&self) -> SymmetrySector {
        self.sector
    }

    pub fn dimension(&self) -> usize {
        self.representatives.len()
    }

    pub fn id(&self) -> String {
        format!(
            "L{}_M{}_k{}_p{}",
            self.sites, self.sector.m, self.sector.k, self.sector.parity
        )
    }

    pub fn index_of_key(&self, key: u32) -> Option<usize> {
        self.keys.binary_search(&key).ok()
    }

    /// Locate an arbitrary pair of the sector: the index of its representative
    /// and `χ(g)` for the group element `g` mapping the pair onto it. `None` when
    /// the pair's orbit carries no state in this sector.
    #[inline]
    pub(crate) fn locate_key(&self, key: u32) -> Option<(usize, Complex64)> {
        let (rep, g) = min_image(key, self.sites, &self.group);
        let idx = self.keys.binary_search(&rep).ok()?;
        Some((idx, character(self.sites, &self.sector, g)))
    }

    /// Components of the normalized basis state `i` in the pair basis.
    pub fn state_components(&self, i: usize) -> Vec<(PairedBasisElement, Complex64)> {
        let norm = self.norms[i];
        projected_components(self.keys[i], self.sites, &self.group, &self.characters)
            .into_iter()
            .filter(|(_, c)| c.norm_sqr() > 1e-24)
            .map(|(k, c)| (PairedBasisElement::from_key(k, self.sites), c / norm))
            .collect()
    }

    pub fn summary(&self) -> BasisSummary {
        let mut hist = BTreeMap::new();
        for &r in &self.orbit_periods {
            *hist.entry(r).or_insert(0usize) += 1;
        }
        BasisSummary {
            sites: self.sites,
            m: self.sector.m,
            k: self.sector.k,
            parity: self.sector.parity,
            dimension: self.dimension(),
            orbit_period_histogram: hist,
        }
    }
}

/// JSON-exportable description of a [`ReducedBasis`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSummary {
    #[serde(rename = "L")]
    pub sites: u32,
    #[serde(rename = "M")]
    pub m: i32,
    pub k: Momentum,
    pub parity: Parity,
    pub dimension: usize,
    pub orbit_period_histogram: BTreeMap<u32, usize>,
}

/// Build the symmetry-adapted basis of `sector` on a chain of `sites` sites.
pub fn build_reduced_basis(sites: u32, sector: SymmetrySector) -> Result<ReducedBasis> {
    sector.validate(sites)?;
    let group = symmetry_group(sites, &sector);
    let characters: Vec<Complex64> = group
        .iter()
        .map(|&g| character(sites, &sector, g))
        .collect();
    let raw = pair_sector_keys(sites, sector.m);

    let entries: Vec<(u32, u32, bool, f64)> = raw
        .par_iter()
        .filter_map(|&key| {
            let period = translation_period(key, sites);
            if matches!(sector.k, Momentum::All) {
                return Some((key, period, false, 1.0));
            }
            if min_image(key, sites, &group).0 != key {
                return None;
            }
            let norm_sqr: f64 = projected_components(key, sites, &group, &characters)
                .iter()
                .map(|(_, c)| c.norm_sqr())
                .sum();
            if norm_sqr < NORM_SQR_CUTOFF {
                return None;
            }
            Some((key, period, reflection_closes_orbit(key, sites), norm_sqr.sqrt()))
        })
        .collect();

    let mut basis = ReducedBasis {
        sites,
        sector,
        representatives: Vec::with_capacity(entries.len()),
        orbit_periods: Vec::with_capacity(entries.len()),
        parity_flags: Vec::with_capacity(entries.len()),
        norms: Vec::with_capacity(entries.len()),
        keys: Vec::with_capacity(entries.len()),
        group,
        characters,
    };
    for (key, period, flag, norm) in entries {
        basis.representatives.push(PairedBasisElement::from_key(key, sites));
        basis.orbit_periods.push(period);
        basis.parity_flags.push(flag);
        basis.norms.push(norm);
        basis.keys.push(key);
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    fn cfg(bits: u32, sites: u32) -> SpinConfiguration {
        SpinConfiguration::new(bits, sites).unwrap()
    }

    fn pair(ket: u32, bra: u32, sites: u32) -> PairedBasisElement {
        PairedBasisElement::new(cfg(ket, sites), cfg(bra, sites)).unwrap()
    }

    fn binomial(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn translate_examples() {
        assert_eq!(translate(cfg(0b0011, 4), 1).unwrap().bits(), 0b0110);
        assert_eq!(translate(cfg(0b1000, 4), 1).unwrap().bits(), 0b0001);
        let c = cfg(0b10110, 5);
        assert_eq!(translate(c, 0).unwrap(), c);
        assert!(translate(c, 5).is_err());
    }

    #[test]
    fn reflect_examples() {
        assert_eq!(reflect(cfg(0b0011, 4)).bits(), 0b1100);
        assert_eq!(reflect(cfg(0b010, 3)).bits(), 0b010);
        assert_eq!(reflect(cfg(0b10000, 5)).bits(), 0b00001);
    }

    #[test]
    fn configuration_rejects_stray_bits() {
        assert!(SpinConfiguration::new(0b100, 2).is_err());
        assert!(SpinConfiguration::new(0, 17).is_err());
    }

    #[test]
    fn pair_sector_examples() {
        let forced = enumerate_pair_sector(2, 2).unwrap();
        assert_eq!(forced, vec![pair(0b11, 0b00, 2)]);
        assert_eq!(enumerate_pair_sector(2, 0).unwrap().len(), 6);
        assert_eq!(enumerate_pair_sector(3, 1).unwrap().len(), 15);
        assert!(enumerate_pair_sector(3, 4).is_err());
    }

    #[test]
    fn pair_sector_matches_brute_force_filter() {
        for sites in 1..=4u32 {
            for m in -(sites as i32)..=(sites as i32) {
                let mut brute = Vec::new();
                for ket in 0..(1u32 << sites) {
                    for bra in 0..(1u32 << sites) {
                        if ket.count_ones() as i32 - bra.count_ones() as i32 == m {
                            brute.push(pair(ket, bra, sites));
                        }
                    }
                }
                let got = enumerate_pair_sector(sites, m).unwrap();
                assert_eq!(got, brute);
                assert_eq!(
                    got.len() as u64,
                    binomial(2 * sites as u64, (sites as i32 - m) as u64)
                );
            }
        }
    }

    fn dihedral(m: i32) -> SymmetrySector {
        SymmetrySector::new(m, Momentum::Index(0), Parity::Even)
    }

    #[test]
    fn orbit_representative_examples() {
        let sector = SymmetrySector::new(1, Momentum::Index(0), Parity::None);
        let (rep, g) = orbit_representative(pair(0b01, 0b00, 2), &sector).unwrap();
        assert_eq!(rep, pair(0b01, 0b00, 2));
        assert_eq!(g, GroupElement::IDENTITY);
        let (rep, g) = orbit_representative(pair(0b10, 0b00, 2), &sector).unwrap();
        assert_eq!(rep, pair(0b01, 0b00, 2));
        assert_eq!(g.shift, 1);
        assert!(!g.reflected);
        assert_eq!(g.apply(pair(0b10, 0b00, 2)), rep);
    }

    #[test]
    fn generic_orbit_has_full_dihedral_size() {
        let p = pair(0b0011, 0b0100, 4);
        let images: HashSet<_> = symmetry_group(4, &dihedral(1))
            .into_iter()
            .map(|g| g.apply(p))
            .collect();
        assert_eq!(images.len(), 8);
    }

    #[test]
    fn orbit_representative_is_idempotent_and_minimal() {
        for p in enumerate_pair_sector(5, 1).unwrap() {
            let (rep, g) = orbit_representative(p, &dihedral(1)).unwrap();
            assert_eq!(g.apply(p), rep);
            assert!(rep <= p);
            assert_eq!(rep.super_particle_number(), 1);
            assert_eq!(rep.ket_particles(), p.ket_particles());
            let (again, h) = orbit_representative(rep, &dihedral(1)).unwrap();
            assert_eq!(again, rep);
            assert_eq!(h, GroupElement::IDENTITY);
        }
    }

    #[test]
    fn parity_needs_reflection_momentum() {
        assert!(build_reduced_basis(6, SymmetrySector::new(1, Momentum::Index(1), Parity::Even)).is_err());
        assert!(build_reduced_basis(6, SymmetrySector::new(1, Momentum::Index(3), Parity::Odd)).is_ok());
        assert!(build_reduced_basis(5, SymmetrySector::new(1, Momentum::All, Parity::Even)).is_err());
        assert!(build_reduced_basis(5, SymmetrySector::new(6, Momentum::Index(0), Parity::None)).is_err());
    }

    #[test]
    fn parity_blocks_sum_to_momentum_block() {
        let sites = 6;
        for m in -2..=3 {
            for k in [0, 3] {
                let none = build_reduced_basis(sites, SymmetrySector::new(m, Momentum::Index(k), Parity::None)).unwrap();
                let even = build_reduced_basis(sites, SymmetrySector::new(m, Momentum::Index(k), Parity::Even)).unwrap();
                let odd = build_reduced_basis(sites, SymmetrySector::new(m, Momentum::Index(k), Parity::Odd)).unwrap();
                assert_eq!(even.dimension() + odd.dimension(), none.dimension(), "m={m} k={k}");
            }
        }
    }

    #[test]
    fn block_dimensions_partition_pair_sector() {
        let sites = 6;
        for m in [-1, 0, 1, 4] {
            let total: usize = SymmetrySector::momentum_blocks(sites, m)
                .into_iter()
                .map(|s| build_reduced_basis(sites, s).unwrap().dimension())
                .sum();
            assert_eq!(total as u64, binomial(12, (6 - m) as u64));
        }
    }

    /// Gram matrix of explicitly expanded states is the identity.
    #[test]
    fn symmetrized_states_are_orthonormal() {
        for sites in [3u32, 4, 5, 6] {
            for sector in SymmetrySector::momentum_blocks(sites, 1) {
                let basis = build_reduced_basis(sites, sector).unwrap();
                let states: Vec<HashMap<u32, Complex64>> = (0..basis.dimension())
                    .map(|i| {
                        basis
                            .state_components(i)
                            .into_iter()
                            .map(|(p, c)| (p.key(), c))
                            .collect()
                    })
                    .collect();
                for (i, a) in states.iter().enumerate() {
                    for (j, b) in states.iter().enumerate() {
                        let dot: Complex64 = a
                            .iter()
                            .filter_map(|(k, x)| b.get(k).map(|y| x.conj() * y))
                            .sum();
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((dot - want).norm() < 1e-12, "{sector} {i} {j} {dot}");
                    }
                }
            }
        }
    }

    #[test]
    fn locate_is_consistent_with_components() {
        let sites = 5;
        let sector = dihedral(1);
        let basis = build_reduced_basis(sites, sector).unwrap();
        // the amplitude of pair b in state i equals χ(h)* N_i^{-1} times its multiplicity;
        // here we only check that every component locates back onto its own state
        for i in 0..basis.dimension() {
            for (p, _) in basis.state_components(i) {
                let (idx, _) = basis.locate_key(p.key()).unwrap();
                assert_eq!(idx, i);
            }
        }
    }

    #[test]
    fn summary_histogram_counts_every_state() {
        let basis = build_reduced_basis(6, dihedral(0)).unwrap();
        let s = basis.summary();
        assert_eq!(s.orbit_period_histogram.values().sum::<usize>(), s.dimension);
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["L"], 6);
        assert_eq!(json["k"], 0);
        assert_eq!(json["parity"], "even");
    }
}
