//! Weak-dissipation structure of the spectrum: unperturbed eigenvalues,
//! first-order shifts and the stripe geometry of the real parts.

use std::collections::BTreeMap;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::ReducedBasis;
use crate::error::{Error, Result};
use crate::liouvillian::{build_liouvillian_sector, build_xx_hamiltonian, ModelParams};
use crate::spectral::dense_eigen;

/// Smallest admissible `|⟨⟨Φ̃, Φ⟩⟩|`.
pub const OVERLAP_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnperturbedEigenvalue {
    pub lambda0: Complex64,
    pub ket_particles: u32,
    pub bra_particles: u32,
}

impl UnperturbedEigenvalue {
    pub fn particle_sum(&self) -> u32 {
        self.ket_particles + self.bra_particles
    }
}

/// `-i(E_m - E_n)` for every pair of fixed-`N` energies with `N_m - N_n = M`.
pub fn unperturbed_eigenvalues(params: &ModelParams, m: i32) -> Result<Vec<UnperturbedEigenvalue>> {
    params.validate()?;
    let sites = params.sites as i32;
    if m.abs() > sites {
        return Err(Error::invalid(format!("sector M={m} is empty for L={sites}")));
    }
    let energies = |n: i32| -> Result<Vec<f64>> {
        build_xx_hamiltonian(params.sites, params.hopping, params.hamiltonian_scale, Some(n as u32))?.eigenvalues()
    };
    let mut out = Vec::new();
    for n_bra in 0.max(-m)..=sites.min(sites - m) {
        let n_ket = n_bra + m;
        let ek = energies(n_ket)?;
        let eb = energies(n_bra)?;
        for &a in &ek {
            for &b in &eb {
                out.push(UnperturbedEigenvalue {
                    lambda0: Complex64::new(0.0, -(a - b)),
                    ket_particles: n_ket as u32,
                    bra_particles: n_bra as u32,
                });
            }
        }
    }
    Ok(out)
}

/// `⟨⟨Φ̃, 𝓛₁ Φ⟩⟩ / ⟨⟨Φ̃, Φ⟩⟩` with `⟨⟨A, B⟩⟩ = Σ conj(A_i) B_i`.
pub fn first_order_correction_generic(
    perturbation: &Mat<Complex64>,
    right: &[Complex64],
    left: &[Complex64],
) -> Result<Complex64> {
    let n = perturbation.nrows();
    if perturbation.ncols() != n || right.len() != n || left.len() != n {
        return Err(Error::invalid("dimension mismatch"));
    }
    let overlap: Complex64 = left.iter().zip(right).map(|(l, r)| l.conj() * r).sum();
    if overlap.norm() <= OVERLAP_FLOOR {
        return Err(Error::numerical(format!(
            "left and right eigenoperators are (nearly) orthogonal: |overlap| = {:e}",
            overlap.norm()
        )));
    }
    let mut numerator = Complex64::default();
    for i in 0..n {
        let row: Complex64 = (0..n).map(|j| perturbation[(i, j)] * right[j]).sum();
        numerator += left[i].conj() * row;
    }
    Ok(numerator / overlap)
}

/// Closed form `-γp L + ½(γp - γl)(N_m + N_n)`.
pub fn closed_form_shift(params: &ModelParams, particle_sum: u32) -> f64 {
    -params.gamma_p * params.sites as f64 + 0.5 * (params.gamma_p - params.gamma_l) * particle_sum as f64
}

/// The same model without dissipation.
pub fn coherent_part(params: &ModelParams) -> ModelParams {
    ModelParams {
        gamma_p: 0.0,
        gamma_l: 0.0,
        ..*params
    }
}

/// The same model without hopping.
pub fn dissipative_part(params: &ModelParams) -> ModelParams {
    ModelParams { hopping: 0.0, ..*params }
}

/// Basis indices grouped by `N_m + N_n`, which the coherent part conserves.
fn particle_sum_groups(basis: &ReducedBasis) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in basis.representatives.iter().enumerate() {
        groups.entry(r.ket_particles() + r.bra_particles()).or_default().push(i);
    }
    groups
}

struct TaggedMode {
    lambda0: Complex64,
    particle_sum: u32,
    right: Vec<Complex64>,
    left: Vec<Complex64>,
}

fn tagged_modes(params: &ModelParams, basis: &ReducedBasis) -> Result<Vec<TaggedMode>> {
    let l0 = build_liouvillian_sector(&coherent_part(params), basis)?.to_dense();
    let dim = basis.dimension();
    let mut out = Vec::with_capacity(dim);
    for (sum, idx) in particle_sum_groups(basis) {
        let k = idx.len();
        let sub = Mat::<Complex64>::from_fn(k, k, |i, j| l0[(idx[i], idx[j])]);
        let (vals, v) = dense_eigen(&sub)?;
        // rows of V⁻¹ are the conjugated left eigenvectors
        let vinv = v.partial_piv_lu().solve(Mat::<Complex64>::identity(k, k));
        for (a, &lambda0) in vals.iter().enumerate() {
            let mut right = vec![Complex64::default(); dim];
            let mut left = vec![Complex64::default(); dim];
            for (i, &g) in idx.iter().enumerate() {
                right[g] = v[(i, a)];
                left[g] = vinv[(a, i)].conj();
            }
            out.push(TaggedMode {
                lambda0,
                particle_sum: sum,
                right,
                left,
            });
        }
    }
    Ok(out)
}

/// Eigenvalues of the coherent part of one symmetry block, each tagged with `N_m + N_n`.
pub fn tagged_unperturbed(params: &ModelParams, basis: &ReducedBasis) -> Result<Vec<(Complex64, u32)>> {
    Ok(tagged_modes(params, basis)?
        .into_iter()
        .map(|m| (m.lambda0, m.particle_sum))
        .collect())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FirstOrderShift {
    pub lambda0: Complex64,
    pub particle_sum: u32,
    /// `⟨⟨Φ̃, 𝓛₁ Φ⟩⟩ / ⟨⟨Φ̃, Φ⟩⟩` with `𝓛₁` the dissipator at the given rates.
    pub generic: Complex64,
    pub closed_form: f64,
}

/// First-order shifts of the eigenvalues of one block that are separated from
/// every other unperturbed eigenvalue of the block by more than `isolation`.
pub fn nondegenerate_first_order(
    params: &ModelParams,
    basis: &ReducedBasis,
    isolation: f64,
) -> Result<Vec<FirstOrderShift>> {
    let modes = tagged_modes(params, basis)?;
    let l1 = build_liouvillian_sector(&dissipative_part(params), basis)?.to_dense();
    let mut out = Vec::new();
    for (i, m) in modes.iter().enumerate() {
        let isolated = modes
            .iter()
            .enumerate()
            .all(|(j, o)| j == i || (o.lambda0 - m.lambda0).norm() > isolation);
        if !isolated {
            continue;
        }
        out.push(FirstOrderShift {
            lambda0: m.lambda0,
            particle_sum: m.particle_sum,
            generic: first_order_correction_generic(&l1, &m.right, &m.left)?,
            closed_form: closed_form_shift(params, m.particle_sum),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripePrediction {
    pub count: usize,
    pub delta: f64,
    /// `Re λ` of each stripe, ordered by `N_m + N_n = |M|, |M|+2, …`.
    pub positions: Vec<f64>,
    #[serde(rename = "L")]
    pub sites: u32,
    #[serde(rename = "M")]
    pub m: i32,
    pub gamma_p: f64,
    pub gamma_l: f64,
}

impl StripePrediction {
    /// Stripe closest to the imaginary axis.
    pub fn nearest_to_origin(&self) -> f64 {
        self.positions.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Number of separate stripes; they all coincide when `γp = γl`.
    pub fn distinct_count(&self) -> usize {
        if self.delta == 0.0 {
            1
        } else {
            self.count
        }
    }
}

pub fn stripe_prediction(sites: u32, m: i32, gamma_p: f64, gamma_l: f64) -> Result<StripePrediction> {
    let params = ModelParams::new(sites, 0.0, gamma_p, gamma_l);
    params.validate()?;
    let am = m.unsigned_abs();
    if am > sites {
        return Err(Error::invalid(format!("|M|={am} exceeds L={sites}")));
    }
    let positions = (0..=sites - am).map(|j| closed_form_shift(&params, am + 2 * j)).collect();
    Ok(StripePrediction {
        count: (sites - am + 1) as usize,
        delta: (gamma_p - gamma_l).abs(),
        positions,
        sites,
        m,
        gamma_p,
        gamma_l,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cluster {
    pub center: f64,
    pub min: f64,
    pub max: f64,
    pub population: usize,
    pub predicted: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum MatchStatus {
    Matched,
    Inconclusive { reason: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterReport {
    pub count: usize,
    pub delta: f64,
    pub positions: Vec<f64>,
    pub matched_clusters: Vec<Cluster>,
    /// Largest `|center - predicted|`; absent when inconclusive.
    pub max_deviation: Option<f64>,
    /// Largest `||c_i - c_{i+1}| - δ|` over adjacent clusters.
    pub max_spacing_deviation: Option<f64>,
    pub threshold: f64,
    #[serde(flatten)]
    pub status: MatchStatus,
}

impl ClusterReport {
    pub fn is_matched(&self) -> bool {
        self.status == MatchStatus::Matched
    }
}

/// Splits the sorted real parts at gaps wider than `δ/2` (or `tolerance` when `δ = 0`)
/// and pairs the clusters with the predicted stripes.
pub fn cluster_match(spectrum: &[Complex64], prediction: &StripePrediction, tolerance: f64) -> Result<ClusterReport> {
    if spectrum.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    if !(tolerance > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let mut re: Vec<f64> = spectrum.iter().map(|z| z.re).collect();
    if re.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite eigenvalue"));
    }
    re.sort_by(f64::total_cmp);
    let threshold = if prediction.delta > 0.0 {
        0.5 * prediction.delta
    } else {
        tolerance
    };
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut start = 0;
    for i in 1..=re.len() {
        if i == re.len() || re[i] - re[i - 1] > threshold {
            let part = &re[start..i];
            clusters.push(Cluster {
                center: part.iter().sum::<f64>() / part.len() as f64,
                min: part[0],
                max: part[part.len() - 1],
                population: part.len(),
                predicted: None,
            });
            start = i;
        }
    }
    let mut expected: Vec<f64> = prediction.positions.clone();
    expected.sort_by(f64::total_cmp);
    expected.dedup();
    let mut report = ClusterReport {
        count: prediction.count,
        delta: prediction.delta,
        positions: prediction.positions.clone(),
        matched_clusters: Vec::new(),
        max_deviation: None,
        max_spacing_deviation: None,
        threshold,
        status: MatchStatus::Matched,
    };
    if clusters.len() != expected.len() {
        report.status = MatchStatus::Inconclusive {
            reason: format!(
                "found {} clusters for {} predicted stripes",
                clusters.len(),
                expected.len()
            ),
        };
        report.matched_clusters = clusters;
        return Ok(report);
    }
    let mut worst = 0.0f64;
    for (c, &p) in clusters.iter_mut().zip(&expected) {
        c.predicted = Some(p);
        worst = worst.max((c.center - p).abs());
    }
    report.max_deviation = Some(worst);
    report.max_spacing_deviation = Some(
        clusters
            .windows(2)
            .map(|w| ((w[1].center - w[0].center) - prediction.delta).abs())
            .fold(0.0, f64::max),
    );
    report.matched_clusters = clusters;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_reduced_basis, enumerate_pair_sector, SymmetrySector};
    use crate::liouvillian::build_liouvillian_full;
    use crate::spectral::{dense_eigenvalues, eigenvalues, match_multisets};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_site_full_sector() {
        let ev = unperturbed_eigenvalues(&ModelParams::new(2, 1.0, 0.0, 0.0), 2).unwrap();
        assert_eq!(ev.len(), 1);
        assert!(ev[0].lambda0.norm() < 1e-15);
        assert_eq!((ev[0].ket_particles, ev[0].bra_particles), (2, 0));
        let ev = unperturbed_eigenvalues(&ModelParams::new(5, 1.0, 0.0, 0.0), -5).unwrap();
        assert_eq!(ev.len(), 1);
        assert!(unperturbed_eigenvalues(&ModelParams::new(3, 1.0, 0.0, 0.0), 4).is_err());
    }

    #[test]
    fn unperturbed_matches_closed_liouvillian() {
        let params = ModelParams::new(4, 0.7, 0.0, 0.0);
        for m in -4..=4 {
            let pred: Vec<Complex64> = unperturbed_eigenvalues(&params, m).unwrap().iter().map(|e| e.lambda0).collect();
            let mut exact = Vec::new();
            for sector in SymmetrySector::momentum_blocks(4, m) {
                let basis = build_reduced_basis(4, sector).unwrap();
                exact.extend(eigenvalues(&build_liouvillian_sector(&params, &basis).unwrap()).unwrap().eigenvalues);
            }
            assert!(match_multisets(&pred, &exact) < 1e-9, "M={m}");
        }
    }

    #[test]
    fn fock_pair_reproduces_closed_form() {
        let params = ModelParams::new(3, 0.0, 0.3, 0.9);
        let l1 = build_liouvillian_full(&params).unwrap().to_dense();
        let dim = 64;
        for key in [0usize, 5, 0b011_101, 63, 0b111_000] {
            let mut phi = vec![Complex64::default(); dim];
            phi[key] = c(1.0, 0.0);
            let got = first_order_correction_generic(&l1, &phi, &phi).unwrap();
            let sum = ((key >> 3) as u32).count_ones() + ((key & 7) as u32).count_ones();
            assert!((got - c(closed_form_shift(&params, sum), 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_perturbation_and_orthogonal_pair() {
        let z = Mat::<Complex64>::zeros(2, 2);
        let v = [c(1.0, 0.0), c(0.0, 0.0)];
        assert_eq!(first_order_correction_generic(&z, &v, &v).unwrap(), Complex64::default());
        let w = [c(0.0, 0.0), c(1.0, 0.0)];
        assert!(matches!(first_order_correction_generic(&z, &v, &w), Err(Error::Numerical(_))));
    }

    #[test]
    fn generic_shift_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 8;
        let mut g = || c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let a = Mat::<Complex64>::from_fn(n, n, |_, _| g());
        let b = Mat::<Complex64>::from_fn(n, n, |_, _| g());
        let (vals, v) = dense_eigen(&a).unwrap();
        let vinv = v.partial_piv_lu().solve(Mat::<Complex64>::identity(n, n));
        let eps = 1e-7;
        let pert = Mat::<Complex64>::from_fn(n, n, |i, j| a[(i, j)] + b[(i, j)] * eps);
        let moved = dense_eigenvalues(&pert).unwrap();
        for (k, &l0) in vals.iter().enumerate() {
            let right: Vec<Complex64> = (0..n).map(|i| v[(i, k)]).collect();
            let left: Vec<Complex64> = (0..n).map(|i| vinv[(k, i)].conj()).collect();
            let d = first_order_correction_generic(&b, &right, &left).unwrap();
            let near = moved.iter().min_by(|x, y| (*x - l0).norm().total_cmp(&(*y - l0).norm())).unwrap();
            assert!(((near - l0) / eps - d).norm() < 1e-6 * d.norm().max(1.0), "{k}");
        }
    }

    #[test]
    fn nondegenerate_modes_follow_closed_form() {
        let params = ModelParams::new(3, 1.0, 0.4, 1.0);
        for m in 0..=3 {
            for sector in SymmetrySector::momentum_blocks(3, m) {
                let basis = build_reduced_basis(3, sector).unwrap();
                for s in nondegenerate_first_order(&params, &basis, 1e-6).unwrap() {
                    assert!((s.generic - c(s.closed_form, 0.0)).norm() < 1e-9, "{s:?}");
                }
            }
        }
    }

    #[test]
    fn stripe_examples() {
        let p = stripe_prediction(10, 3, 0.01, 0.1).unwrap();
        assert!((p.delta - 0.09).abs() < 1e-15);
        assert!((p.nearest_to_origin() + 0.235).abs() < 1e-12);
        assert_eq!(p.count, 8);
        assert_eq!(stripe_prediction(10, 9, 0.3, 0.1).unwrap().count, 2);
        let eq = stripe_prediction(6, 2, 0.2, 0.2).unwrap();
        assert_eq!(eq.delta, 0.0);
        assert_eq!(eq.distinct_count(), 1);
        assert!(eq.positions.iter().all(|&x| (x + 1.2).abs() < 1e-12));
        assert!(stripe_prediction(4, 5, 0.1, 0.1).is_err());
        assert_eq!(stripe_prediction(4, -2, 0.1, 0.3).unwrap().positions, stripe_prediction(4, 2, 0.1, 0.3).unwrap().positions);
    }

    #[test]
    fn stripe_count_equals_distinct_particle_sums() {
        for l in 1..=8u32 {
            for m in -(l as i32)..=l as i32 {
                let sums: std::collections::BTreeSet<u32> = enumerate_pair_sector(l, m)
                    .unwrap()
                    .iter()
                    .map(|p| p.ket_particles() + p.bra_particles())
                    .collect();
                assert_eq!(stripe_prediction(l, m, 0.1, 0.2).unwrap().count, sums.len());
            }
        }
    }

    #[test]
    fn cluster_trivial_cases() {
        let p = stripe_prediction(4, 0, 0.0, 0.0).unwrap();
        let spec = vec![c(0.0, 1.0), c(0.0, -2.0), c(1e-14, 0.0)];
        let r = cluster_match(&spec, &p, 1e-8).unwrap();
        assert!(r.is_matched());
        assert_eq!(r.matched_clusters.len(), 1);
        assert!(r.max_deviation.unwrap() < 1e-13);

        let params = ModelParams::new(6, 1.0, 0.05, 0.2);
        let basis = build_reduced_basis(6, SymmetrySector::unreduced(6)).unwrap();
        let ev = eigenvalues(&build_liouvillian_sector(&params, &basis).unwrap()).unwrap();
        assert_eq!(ev.len(), 1);
        let r = cluster_match(&ev.eigenvalues, &stripe_prediction(6, 6, 0.05, 0.2).unwrap(), 1e-8).unwrap();
        assert!(r.is_matched());
        assert!((r.matched_clusters[0].center - (-0.3 + 0.5 * (0.05 - 0.2) * 6.0)).abs() < 1e-12);
    }

    #[test]
    fn overlapping_stripes_are_inconclusive() {
        let p = stripe_prediction(3, 0, 0.1, 0.2).unwrap();
        let spec: Vec<Complex64> = (0..40).map(|i| c(-0.5 + 0.01 * i as f64, 0.0)).collect();
        let r = cluster_match(&spec, &p, 1e-8).unwrap();
        assert!(!r.is_matched());
        assert!(r.max_deviation.is_none());
    }

    proptest! {
        #[test]
        fn stripes_scale_linearly(l in 1u32..12, m in -11i32..12, gp in 0.0..2.0f64, gl in 0.0..2.0f64, s in 0.01..100.0f64) {
            prop_assume!(m.unsigned_abs() <= l);
            let a = stripe_prediction(l, m, gp, gl).unwrap();
            let b = stripe_prediction(l, m, s * gp, s * gl).unwrap();
            prop_assert!((b.delta - s * a.delta).abs() <= 1e-12 * (1.0 + b.delta));
            for (x, y) in a.positions.iter().zip(&b.positions) {
                prop_assert!((y - s * x).abs() <= 1e-12 * (1.0 + y.abs()));
            }
            for w in a.positions.windows(2) {
                prop_assert!(((w[1] - w[0]).abs() - a.delta).abs() < 1e-12);
            }
        }
    }
}
