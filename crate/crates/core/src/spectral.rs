//! Dense complex spectra of Lindbladian blocks, consistency checks, gap and
//! steady state.

use std::time::Instant;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{PairedBasisElement, ReducedBasis};
use crate::error::{Error, Result};
use crate::liouvillian::{BasisTag, ModelParams, SuperOperatorMatrix};

/// Default ceiling on the dimension handed to the dense solver.
pub const DEFAULT_DENSE_CAP: usize = 12_000;

/// Eigenvalues with `|λ|` at or below this count as zero.
pub const ZERO_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComplexSpectrum {
    /// Sorted by `(Re, Im)`.
    pub eigenvalues: Vec<Complex64>,
    pub basis: BasisTag,
    pub params: ModelParams,
    /// `|Σλ - tr 𝓛| / max(1, |tr 𝓛|)`.
    pub solver_residual: f64,
    pub seconds: f64,
}

impl ComplexSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

pub fn canonical_sort(values: &mut [Complex64]) {
    values.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// All eigenvalues of a dense complex matrix, canonically sorted.
pub fn dense_eigenvalues(m: &Mat<Complex64>) -> Result<Vec<Complex64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.nrows() == 1 {
        return Ok(vec![m[(0, 0)]]);
    }
    // one eigensolve is one sequential call, so results do not depend on the thread count
    faer::set_global_parallelism(faer::Par::Seq);
    let mut vals = m
        .eigenvalues()
        .map_err(|e| Error::numerical(format!("eigensolver did not converge at dimension {}: {e:?}", m.nrows())))?;
    if vals.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::numerical(format!(
            "eigensolver returned non-finite values at dimension {}",
            m.nrows()
        )));
    }
    canonical_sort(&mut vals);
    Ok(vals)
}

/// Eigenvalues with right eigenvectors as columns, in solver order.
pub fn dense_eigen(m: &Mat<Complex64>) -> Result<(Vec<Complex64>, Mat<Complex64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    faer::set_global_parallelism(faer::Par::Seq);
    let evd = m
        .eigen()
        .map_err(|e| Error::numerical(format!("eigensolver did not converge at dimension {n}: {e:?}")))?;
    let vals: Vec<Complex64> = (0..n).map(|i| evd.S()[i]).collect();
    if vals.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::numerical(format!("eigensolver returned non-finite values at dimension {n}")));
    }
    Ok((vals, evd.U().to_owned()))
}

pub fn eigenvalues(matrix: &SuperOperatorMatrix) -> Result<ComplexSpectrum> {
    eigenvalues_with_cap(matrix, DEFAULT_DENSE_CAP)
}

pub fn eigenvalues_with_cap(matrix: &SuperOperatorMatrix, cap: usize) -> Result<ComplexSpectrum> {
    if matrix.dimension > cap {
        return Err(Error::invalid(format!(
            "dimension {} exceeds the dense cap {cap}",
            matrix.dimension
        )));
    }
    let start = Instant::now();
    let eigenvalues = dense_eigenvalues(&matrix.to_dense())?;
    let trace = matrix.trace();
    let sum: Complex64 = eigenvalues.iter().sum();
    Ok(ComplexSpectrum {
        solver_residual: (sum - trace).norm() / trace.norm().max(1.0),
        eigenvalues,
        basis: matrix.basis,
        params: matrix.params,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Tolerances of [`validate_spectrum`]; these are our own thresholds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ValidationTolerances {
    pub trace_relative: f64,
    pub max_real_part: f64,
    pub conjugate_pairing: f64,
}

impl Default for ValidationTolerances {
    fn default() -> Self {
        ValidationTolerances {
            trace_relative: 1e-8,
            max_real_part: 1e-10,
            conjugate_pairing: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Violation {
    DimensionMismatch { matrix: usize, spectrum: usize },
    Trace { relative_error: f64, tolerance: f64 },
    PositiveRealPart { max_real: f64, tolerance: f64 },
    ConjugatePairing { max_distance: f64, tolerance: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub trace_relative_error: f64,
    pub max_real_part: f64,
    pub conjugate_pairing: Option<f64>,
    pub tolerances: ValidationTolerances,
    pub violations: Vec<Violation>,
}

impl SpectrumReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<SpectrumReport> {
        if self.is_valid() {
            Ok(self)
        } else {
            Err(Error::Validation(serde_json::to_string(&self.violations)?))
        }
    }
}

/// Trace sum rule, contractivity and (optionally) `λ(-M) = λ(M)*` pairing.
pub fn validate_spectrum(
    matrix: &SuperOperatorMatrix,
    spectrum: &ComplexSpectrum,
    conjugate_sector: Option<&ComplexSpectrum>,
    tol: ValidationTolerances,
) -> SpectrumReport {
    let mut violations = Vec::new();
    if matrix.dimension != spectrum.len() {
        violations.push(Violation::DimensionMismatch {
            matrix: matrix.dimension,
            spectrum: spectrum.len(),
        });
    }
    let trace = matrix.trace();
    let sum: Complex64 = spectrum.eigenvalues.iter().sum();
    // relative to |tr 𝓛|, absolute when the trace vanishes (closed system)
    let trace_relative_error = if trace.norm() > 0.0 {
        (sum - trace).norm() / trace.norm()
    } else {
        (sum - trace).norm()
    };
    if !(trace_relative_error <= tol.trace_relative) {
        violations.push(Violation::Trace {
            relative_error: trace_relative_error,
            tolerance: tol.trace_relative,
        });
    }
    let max_real_part = spectrum
        .eigenvalues
        .iter()
        .map(|v| v.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_real_part > tol.max_real_part {
        violations.push(Violation::PositiveRealPart {
            max_real: max_real_part,
            tolerance: tol.max_real_part,
        });
    }
    let conjugate_pairing = conjugate_sector.map(|other| {
        let conj: Vec<Complex64> = other.eigenvalues.iter().map(|v| v.conj()).collect();
        match_multisets(&spectrum.eigenvalues, &conj)
    });
    if let Some(d) = conjugate_pairing {
        if !(d <= tol.conjugate_pairing) {
            violations.push(Violation::ConjugatePairing {
                max_distance: d,
                tolerance: tol.conjugate_pairing,
            });
        }
    }
    SpectrumReport {
        trace_relative_error,
        max_real_part,
        conjugate_pairing,
        tolerances: tol,
        violations,
    }
}

/// Largest distance in a greedy nearest-neighbour matching of two multisets;
/// infinite when the sizes differ. A finite result bounds the optimal
/// bottleneck matching from above.
pub fn match_multisets(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut b_sorted: Vec<Complex64> = b.to_vec();
    canonical_sort(&mut b_sorted);
    let mut used = vec![false; b_sorted.len()];
    let mut worst = 0.0f64;
    for x in a {
        // scan outward from the insertion point in real part; stop once the
        // real-part gap alone exceeds the best distance found
        let start = b_sorted.partition_point(|y| y.re < x.re);
        let mut best: Option<(f64, usize)> = None;
        let mut lo = start;
        let mut hi = start;
        loop {
            let mut progressed = false;
            if hi < b_sorted.len() {
                let gap = b_sorted[hi].re - x.re;
                if best.is_none_or(|(d, _)| gap <= d) {
                    if !used[hi] {
                        let d = (b_sorted[hi] - x).norm();
                        if best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, hi));
                        }
                    }
                    hi += 1;
                    progressed = true;
                }
            }
            if lo > 0 {
                let gap = x.re - b_sorted[lo - 1].re;
                if best.is_none_or(|(d, _)| gap <= d) {
                    if !used[lo - 1] {
                        let d = (b_sorted[lo - 1] - x).norm();
                        if best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, lo - 1));
                        }
                    }
                    lo -= 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        let (d, j) = best.expect("sizes match, so an unused partner exists");
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

/// Hermitian `2^L × 2^L` density matrix, row-major.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    pub sites: u32,
    pub elements: Mat<Complex64>,
}

impl DensityMatrix {
    pub fn trace(&self) -> Complex64 {
        (0..self.elements.nrows()).map(|i| self.elements[(i, i)]).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.elements.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.elements[(i, j)] - self.elements[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let n = self.elements.nrows();
        let herm = Mat::<Complex64>::from_fn(n, n, |i, j| {
            (self.elements[(i, j)] + self.elements[(j, i)].conj()) * 0.5
        });
        let vals = herm
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| Error::numerical(format!("{e:?}")))?;
        Ok(vals.into_iter().fold(f64::INFINITY, f64::min))
    }
}

/// How basis vectors of a block expand into operators `|m⟩⟨n|`.
pub enum BlockBasis<'a> {
    Full { sites: u32 },
    Reduced(&'a ReducedBasis),
}

impl BlockBasis<'_> {
    fn sites(&self) -> u32 {
        match self {
            BlockBasis::Full { sites } => *sites,
            BlockBasis::Reduced(b) => b.sites(),
        }
    }

    fn components(&self, i: usize) -> Vec<(PairedBasisElement, Complex64)> {
        match self {
            BlockBasis::Full { sites } => vec![(
                PairedBasisElement::from_key(i as u32, *sites),
                Complex64::new(1.0, 0.0),
            )],
            BlockBasis::Reduced(b) => b.state_components(i),
        }
    }

    fn dimension(&self) -> usize {
        match self {
            BlockBasis::Full { sites } => 1usize << (2 * sites),
            BlockBasis::Reduced(b) => b.dimension(),
        }
    }

    /// `tr(basis_i)` for every basis vector.
    fn trace_functional(&self) -> Vec<Complex64> {
        (0..self.dimension())
            .map(|i| {
                self.components(i)
                    .into_iter()
                    .filter(|(p, _)| p.ket == p.bra)
                    .map(|(_, c)| c)
                    .sum()
            })
            .collect()
    }

    pub fn devectorize(&self, coeffs: &[Complex64]) -> DensityMatrix {
        let sites = self.sites();
        let n = 1usize << sites;
        let mut rho = Mat::<Complex64>::zeros(n, n);
        for (i, &x) in coeffs.iter().enumerate() {
            if x == Complex64::default() {
                continue;
            }
            for (p, c) in self.components(i) {
                rho[(p.ket.bits() as usize, p.bra.bits() as usize)] += x * c;
            }
        }
        DensityMatrix { sites, elements: rho }
    }
}

#[derive(Clone, Debug)]
pub struct GapReport {
    /// `-max{Re λ : |λ| > tol}`.
    pub gap: f64,
    pub zero_modes: usize,
    pub steady_state: Option<DensityMatrix>,
    /// `‖𝓛 x‖_∞` of the returned steady-state vector.
    pub residual: Option<f64>,
}

/// Spectral gap and, when the block holds exactly one zero mode, the steady
/// state normalized to unit trace.
pub fn steady_state_and_gap(
    spectrum: &ComplexSpectrum,
    matrix: &SuperOperatorMatrix,
    basis: &BlockBasis<'_>,
) -> Result<GapReport> {
    if basis.dimension() != matrix.dimension || spectrum.len() != matrix.dimension {
        return Err(Error::invalid("spectrum, matrix and basis dimensions differ"));
    }
    let zero_modes = spectrum
        .eigenvalues
        .iter()
        .filter(|v| v.norm() <= ZERO_TOLERANCE)
        .count();
    let gap = -spectrum
        .eigenvalues
        .iter()
        .filter(|v| v.norm() > ZERO_TOLERANCE)
        .map(|v| v.re)
        .fold(f64::NEG_INFINITY, f64::max);
    match zero_modes {
        0 => Ok(GapReport {
            gap,
            zero_modes,
            steady_state: None,
            residual: None,
        }),
        1 => {
            let x = null_vector_with_unit_trace(matrix, basis)?;
            let residual = matrix
                .apply(&x)
                .into_iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max);
            Ok(GapReport {
                gap,
                zero_modes,
                steady_state: Some(basis.devectorize(&x)),
                residual: Some(residual),
            })
        }
        n => Err(Error::Validation(format!(
            "{n} eigenvalues with |λ| <= {ZERO_TOLERANCE}; degenerate steady state not resolved"
        ))),
    }
}

/// Solve `𝓛 x = 0` with one row replaced by the trace condition `tr(x) = 1`.
fn null_vector_with_unit_trace(
    matrix: &SuperOperatorMatrix,
    basis: &BlockBasis<'_>,
) -> Result<Vec<Complex64>> {
    let t = basis.trace_functional();
    let pivot = t
        .iter()
        .position(|c| c.norm() > 1e-12)
        .ok_or_else(|| Error::invalid("block contains no operator with nonzero trace"))?;
    let mut a = matrix.to_dense();
    for (j, &tj) in t.iter().enumerate() {
        a[(pivot, j)] = tj;
    }
    let mut rhs = Mat::<Complex64>::zeros(matrix.dimension, 1);
    rhs[(pivot, 0)] = Complex64::new(1.0, 0.0);
    let x = a.partial_piv_lu().solve(&rhs);
    let out: Vec<Complex64> = (0..matrix.dimension).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::numerical("steady-state solve produced non-finite values"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_reduced_basis, Momentum, Parity, SymmetrySector};
    use crate::liouvillian::{build_liouvillian_full, build_liouvillian_sector};

    #[test]
    fn single_site_gap() {
        let (gp, gl) = (0.3, 0.9);
        let p = ModelParams::new(1, 0.0, gp, gl);
        let m = build_liouvillian_full(&p).unwrap();
        let s = eigenvalues(&m).unwrap();
        let g = steady_state_and_gap(&s, &m, &BlockBasis::Full { sites: 1 }).unwrap();
        assert!((g.gap - (gp + gl) / 2.0).abs() < 1e-12);
        assert_eq!(g.zero_modes, 1);
        let rho = g.steady_state.unwrap();
        assert!((rho.elements[(1, 1)].re - gp / (gp + gl)).abs() < 1e-12);
    }

    #[test]
    fn three_site_steady_state_is_a_product_state() {
        let (gp, gl) = (0.2, 0.6);
        let p = ModelParams::new(3, 1.0, gp, gl);
        let m = build_liouvillian_full(&p).unwrap();
        let s = eigenvalues(&m).unwrap();
        let g = steady_state_and_gap(&s, &m, &BlockBasis::Full { sites: 3 }).unwrap();
        assert!(g.residual.unwrap() < 1e-10);
        let rho = g.steady_state.unwrap();
        assert!((rho.trace() - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(rho.hermiticity_error() < 1e-12);
        assert!(rho.min_eigenvalue().unwrap() > -1e-12);
        let f = gp / (gp + gl);
        for b in 0..8usize {
            let n = (b as u32).count_ones() as i32;
            let expected = f.powi(n) * (1.0 - f).powi(3 - n);
            assert!((rho.elements[(b, b)] - Complex64::new(expected, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn symmetric_block_holds_the_unique_zero_mode() {
        let p = ModelParams::new(4, 1.0, 0.3, 0.5);
        let b = build_reduced_basis(4, SymmetrySector::new(0, Momentum::Index(0), Parity::Even)).unwrap();
        let m = build_liouvillian_sector(&p, &b).unwrap();
        let s = eigenvalues(&m).unwrap();
        let g = steady_state_and_gap(&s, &m, &BlockBasis::Reduced(&b)).unwrap();
        assert_eq!(g.zero_modes, 1);
        assert!(g.residual.unwrap() < 1e-10);
        assert!(g.gap > 0.0);
        let rho = g.steady_state.unwrap();
        assert!((rho.trace() - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(rho.min_eigenvalue().unwrap() > -1e-12);

        let b1 = build_reduced_basis(4, SymmetrySector::new(1, Momentum::Index(0), Parity::Even)).unwrap();
        let m1 = build_liouvillian_sector(&p, &b1).unwrap();
        let g1 = steady_state_and_gap(&eigenvalues(&m1).unwrap(), &m1, &BlockBasis::Reduced(&b1)).unwrap();
        assert_eq!(g1.zero_modes, 0);
        assert!(g1.steady_state.is_none());
    }

    #[test]
    fn validation_flags_violations() {
        let p = ModelParams::new(2, 1.0, 0.1, 0.3);
        let m = build_liouvillian_full(&p).unwrap();
        let mut s = eigenvalues(&m).unwrap();
        assert!(validate_spectrum(&m, &s, None, ValidationTolerances::default()).is_valid());
        s.eigenvalues[0] = Complex64::new(0.5, 0.0);
        let r = validate_spectrum(&m, &s, None, ValidationTolerances::default());
        assert!(r.violations.iter().any(|v| matches!(v, Violation::PositiveRealPart { .. })));
        assert!(r.violations.iter().any(|v| matches!(v, Violation::Trace { .. })));
        assert!(r.into_result().is_err());
        assert!(eigenvalues_with_cap(&m, 4).is_err());
    }

    #[test]
    fn eigenvalues_are_deterministic() {
        let p = ModelParams::new(5, 1.0, 0.2, 0.4);
        let b = build_reduced_basis(5, SymmetrySector::new(1, Momentum::Index(2), Parity::None)).unwrap();
        let m = build_liouvillian_sector(&p, &b).unwrap();
        let a = eigenvalues(&m).unwrap().eigenvalues;
        let c = eigenvalues(&m).unwrap().eigenvalues;
        assert_eq!(a, c);
    }

    #[test]
    fn multiset_matching() {
        let a = [Complex64::new(0.0, 1.0), Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
        let b = [Complex64::new(1.0, 1e-9), Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        assert!(match_multisets(&a, &b) <= 1e-9 + 1e-15);
        assert_eq!(match_multisets(&a, &b[..2]), f64::INFINITY);
    }
}
