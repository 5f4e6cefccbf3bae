//! Complex spacing ratios `z_i = (λ_i - λ_i^NN) / (λ_i - λ_i^NNN)` and their
//! radial and angular marginals.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub z: Complex64,
    pub r: f64,
    /// `arg z` in `(-π, π]`.
    pub theta: f64,
}

impl RatioSample {
    pub fn new(z: Complex64) -> Self {
        let mut theta = z.arg();
        if theta <= -PI {
            theta = PI;
        }
        RatioSample {
            z,
            r: z.norm(),
            theta,
        }
    }
}

/// Distance used for the neighbour search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    /// Minimum-image distance on a square torus of side `period` in both directions.
    Torus { period: f64 },
}

impl Metric {
    /// Displacement from `from` to `to`.
    #[inline]
    pub fn displacement(&self, from: Complex64, to: Complex64) -> Complex64 {
        let d = to - from;
        match *self {
            Metric::Euclidean => d,
            Metric::Torus { period } => Complex64::new(wrap(d.re, period), wrap(d.im, period)),
        }
    }
}

/// Wrap into `[-period/2, period/2)`.
#[inline]
pub(crate) fn wrap(x: f64, period: f64) -> f64 {
    x - period * (x / period + 0.5).floor()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CsrOptions {
    pub metric: Metric,
    /// Samples whose nearest-neighbour distance is `<=` this are skipped.
    pub degeneracy_tolerance: f64,
}

impl Default for CsrOptions {
    fn default() -> Self {
        CsrOptions {
            metric: Metric::Euclidean,
            degeneracy_tolerance: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CsrResult {
    pub samples: Vec<RatioSample>,
    /// Points skipped because their nearest neighbour coincides with them.
    pub skipped: usize,
}

impl CsrResult {
    pub fn extend(&mut self, other: CsrResult) {
        self.samples.extend(other.samples);
        self.skipped += other.skipped;
    }
}

/// Nearest and next-nearest neighbour indices of every point.
pub type Neighbours = (usize, usize);

#[inline]
fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

#[derive(Clone, Copy)]
struct BestTwo {
    first: (f64, usize),
    second: (f64, usize),
}

impl BestTwo {
    fn new() -> Self {
        BestTwo {
            first: (f64::INFINITY, usize::MAX),
            second: (f64::INFINITY, usize::MAX),
        }
    }

    #[inline]
    fn offer(&mut self, cand: (f64, usize)) {
        if better(cand, self.first) {
            self.second = self.first;
            self.first = cand;
        } else if better(cand, self.second) {
            self.second = cand;
        }
    }
}

/// Reference `O(n²)` search. Ties in distance go to the lower index.
pub fn nearest_two_brute(points: &[Complex64], metric: Metric) -> Result<Vec<Neighbours>> {
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut best = BestTwo::new();
            for (j, &q) in points.iter().enumerate() {
                if j != i {
                    best.offer((metric.displacement(p, q).norm_sqr(), j));
                }
            }
            (best.first.1, best.second.1)
        })
        .collect())
}

/// Uniform-grid neighbour search in the Euclidean plane. Returns exactly the
/// indices of [`nearest_two_brute`].
pub fn nearest_two(points: &[Complex64]) -> Result<Vec<Neighbours>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 points, got {n}")));
    }
    if n < 64 {
        return nearest_two_brute(points, Metric::Euclidean);
    }
    if points.iter().any(|p| !(p.re.is_finite() && p.im.is_finite())) {
        return Err(Error::invalid("non-finite point"));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.re);
        x1 = x1.max(p.re);
        y0 = y0.min(p.im);
        y1 = y1.max(p.im);
    }
    let extent = (x1 - x0).max(y1 - y0);
    if extent == 0.0 {
        return nearest_two_brute(points, Metric::Euclidean);
    }
    let per_side = ((n as f64 / 2.0).sqrt().ceil() as usize).max(1);
    let side = extent / per_side as f64;
    let nx = (((x1 - x0) / side) as usize + 1).min(per_side + 1);
    let ny = (((y1 - y0) / side) as usize + 1).min(per_side + 1);
    let cell_of = |p: Complex64| -> (usize, usize) {
        let cx = (((p.re - x0) / side) as usize).min(nx - 1);
        let cy = (((p.im - y0) / side) as usize).min(ny - 1);
        (cx, cy)
    };

    // counting sort of point indices by cell
    let mut start = vec![0usize; nx * ny + 1];
    let cells: Vec<usize> = points
        .iter()
        .map(|&p| {
            let (cx, cy) = cell_of(p);
            cy * nx + cx
        })
        .collect();
    for &c in &cells {
        start[c + 1] += 1;
    }
    for c in 0..nx * ny {
        start[c + 1] += start[c];
    }
    let mut fill = start.clone();
    let mut order = vec![0usize; n];
    for (i, &c) in cells.iter().enumerate() {
        order[fill[c]] = i;
        fill[c] += 1;
    }

    let out = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = points[i];
            let (cx, cy) = cell_of(p);
            let mut best = BestTwo::new();
            let mut ring = 0usize;
            loop {
                let xlo = cx as isize - ring as isize;
                let xhi = (cx + ring) as isize;
                let ylo = cy as isize - ring as isize;
                let yhi = (cy + ring) as isize;
                for gy in ylo..=yhi {
                    if gy < 0 || gy >= ny as isize {
                        continue;
                    }
                    let on_edge_row = gy == ylo || gy == yhi;
                    let mut gx = xlo;
                    while gx <= xhi {
                        if gx >= 0 && gx < nx as isize {
                            let c = gy as usize * nx + gx as usize;
                            for &j in &order[start[c]..start[c + 1]] {
                                if j != i {
                                    best.offer(((points[j] - p).norm_sqr(), j));
                                }
                            }
                        }
                        // interior rows only touch the two edge columns
                        gx += if on_edge_row || gx == xhi { 1 } else { xhi - xlo };
                    }
                }
                let covered = xlo <= 0 && ylo <= 0 && xhi >= nx as isize - 1 && yhi >= ny as isize - 1;
                // everything outside the searched block is at least `ring * side` away
                let reach = (ring as f64 * side) * (1.0 - 1e-9);
                if covered || (best.second.1 != usize::MAX && best.second.0 < reach * reach) {
                    break;
                }
                ring += 1;
            }
            (best.first.1, best.second.1)
        })
        .collect();
    Ok(out)
}

/// CSR with Euclidean distances and exact-degeneracy skipping.
pub fn complex_spacing_ratios(points: &[Complex64]) -> Result<CsrResult> {
    complex_spacing_ratios_with(points, &CsrOptions::default())
}

pub fn complex_spacing_ratios_with(points: &[Complex64], opts: &CsrOptions) -> Result<CsrResult> {
    let neighbours = match opts.metric {
        Metric::Euclidean => nearest_two(points)?,
        metric => nearest_two_brute(points, metric)?,
    };
    let mut out = CsrResult::default();
    for (i, &(nn, nnn)) in neighbours.iter().enumerate() {
        let to_nn = opts.metric.displacement(points[i], points[nn]);
        let to_nnn = opts.metric.displacement(points[i], points[nnn]);
        if to_nn.norm() <= opts.degeneracy_tolerance {
            out.skipped += 1;
            continue;
        }
        // (λ - λ_NN) / (λ - λ_NNN) = d_NN / d_NNN
        out.samples.push(RatioSample::new(to_nn / to_nnn));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Radius,
    Angle,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginalHistogram {
    pub axis: Axis,
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
    pub counts: Vec<u64>,
    pub sample_count: usize,
    pub skipped_degenerate: usize,
}

impl MarginalHistogram {
    fn build(axis: Axis, values: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize, skipped: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        let mut total = 0usize;
        for v in values {
            let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
            total += 1;
        }
        let densities = counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / (total as f64 * width) })
            .collect();
        MarginalHistogram {
            axis,
            bin_edges: (0..=bins).map(|i| lo + i as f64 * width).collect(),
            densities,
            counts,
            sample_count: total,
            skipped_degenerate: skipped,
        }
    }

    pub fn bins(&self) -> usize {
        self.densities.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `Σ density · width`.
    pub fn integral(&self) -> f64 {
        self.densities.iter().zip(self.widths()).map(|(d, w)| d * w).sum()
    }

    /// Binomial standard error of each bin's density.
    pub fn standard_errors(&self) -> Vec<f64> {
        let n = self.sample_count as f64;
        self.counts
            .iter()
            .zip(self.widths())
            .map(|(&c, w)| {
                let p = c as f64 / n;
                (n * p * (1.0 - p)).sqrt() / (n * w)
            })
            .collect()
    }
}

/// Angular histogram over `(-π, π]` and radial histogram over `[0, 1]`, each with unit integral.
pub fn marginals(
    samples: &[RatioSample],
    skipped: usize,
    bins: usize,
) -> Result<(MarginalHistogram, MarginalHistogram)> {
    if bins == 0 {
        return Err(Error::invalid("number of bins must be positive"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("no samples to histogram"));
    }
    let theta = MarginalHistogram::build(Axis::Angle, samples.iter().map(|s| s.theta), -PI, PI, bins, skipped);
    let radius = MarginalHistogram::build(Axis::Radius, samples.iter().map(|s| s.r), 0.0, 1.0, bins, skipped);
    Ok((theta, radius))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean_r: f64,
    pub mean_r_stderr: f64,
    pub mean_cos_theta: f64,
    pub mean_cos_theta_stderr: f64,
    pub count: usize,
    pub skipped: usize,
}

fn mean_and_stderr(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0, n);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt(), n)
}

pub fn summary_stats(samples: &[RatioSample], skipped: usize) -> Result<SummaryStats> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let (mean_r, mean_r_stderr, count) = mean_and_stderr(samples.iter().map(|s| s.r));
    let (mean_cos_theta, mean_cos_theta_stderr, _) = mean_and_stderr(samples.iter().map(|s| s.theta.cos()));
    Ok(SummaryStats {
        mean_r,
        mean_r_stderr,
        mean_cos_theta,
        mean_cos_theta_stderr,
        count,
        skipped,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

/// Pearson χ² of the angular histogram against the flat law `1/(2π)`.
pub fn angular_flatness_test(hist: &MarginalHistogram) -> Result<ChiSquareTest> {
    if hist.axis != Axis::Angle || hist.bins() < 2 {
        return Err(Error::invalid("need an angular histogram with at least two bins"));
    }
    let n = hist.sample_count as f64;
    let statistic: f64 = hist
        .counts
        .iter()
        .zip(hist.widths())
        .map(|(&c, w)| {
            let expected = n * w / (2.0 * PI);
            (c as f64 - expected).powi(2) / expected
        })
        .sum();
    let dof = hist.bins() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::numerical(e.to_string()))?;
    Ok(ChiSquareTest {
        statistic,
        degrees_of_freedom: dof,
        p_value: dist.sf(statistic),
    })
}

/// Maximum-likelihood exponent `a` of `ρ(r) ∝ r^a` fitted to samples with
/// `r < r_max`, with its asymptotic standard error.
pub fn small_r_exponent(samples: &[RatioSample], r_max: f64) -> Result<(f64, f64, usize)> {
    let logs: Vec<f64> = samples
        .iter()
        .filter(|s| s.r < r_max && s.r > 0.0)
        .map(|s| (s.r / r_max).ln())
        .collect();
    let n = logs.len();
    if n < 2 {
        return Err(Error::invalid(format!("only {n} samples below r = {r_max}")));
    }
    let a = -(n as f64) / logs.iter().sum::<f64>() - 1.0;
    Ok((a, (a + 1.0) / (n as f64).sqrt(), n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn uniform_points(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| c(rng.random(), rng.random())).collect()
    }

    #[test]
    fn hand_computed_ratios() {
        let res = complex_spacing_ratios(&[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 2.0)]).unwrap();
        let s = res.samples[0];
        assert!((s.z - c(0.0, -0.5)).norm() < 1e-15);
        assert!((s.r - 0.5).abs() < 1e-15);
        assert!((s.theta + PI / 2.0).abs() < 1e-15);

        let res = complex_spacing_ratios(&[c(0.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
        assert!((res.samples[0].z - c(0.5, 0.0)).norm() < 1e-15);
        assert_eq!(res.samples[0].theta, 0.0);
    }

    // {0, 1, 2i}: at 0 → -i/2, at 1 → (1+2i)/5, at 2i → 2i/(2i-1)
    #[test]
    fn summary_over_three_point_set() {
        let pts = [c(0.0, 0.0), c(1.0, 0.0), c(0.0, 2.0)];
        let res = complex_spacing_ratios(&pts).unwrap();
        let expected = [c(0.0, -0.5), c(1.0, 2.0) / 5.0, c(0.0, 2.0) / c(-1.0, 2.0)];
        for (s, e) in res.samples.iter().zip(expected) {
            assert!((s.z - e).norm() < 1e-15, "{} vs {}", s.z, e);
        }
        let stats = summary_stats(&res.samples, res.skipped).unwrap();
        let mean_r = expected.iter().map(|z| z.norm()).sum::<f64>() / 3.0;
        let mean_cos = expected.iter().map(|z| z.arg().cos()).sum::<f64>() / 3.0;
        assert!((stats.mean_r - mean_r).abs() < 1e-15);
        assert!((stats.mean_cos_theta - mean_cos).abs() < 1e-15);
    }

    #[test]
    fn too_few_points() {
        assert!(complex_spacing_ratios(&[c(0.0, 0.0), c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn exact_degeneracy_is_skipped() {
        let pts = [c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(3.0, 1.0)];
        let res = complex_spacing_ratios(&pts).unwrap();
        assert_eq!(res.skipped, 2);
        assert_eq!(res.samples.len(), 2);
    }

    #[test]
    fn grid_matches_brute_force_exactly() {
        for (n, seed) in [(100, 1), (2_000, 2), (10_000, 3)] {
            let pts = uniform_points(n, seed);
            assert_eq!(nearest_two(&pts).unwrap(), nearest_two_brute(&pts, Metric::Euclidean).unwrap());
        }
    }

    #[test]
    fn grid_handles_lattices_with_ties() {
        // square lattice: every interior point has four equidistant neighbours
        let pts: Vec<Complex64> = (0..20)
            .flat_map(|i| (0..15).map(move |j| c(i as f64, j as f64)))
            .collect();
        assert_eq!(nearest_two(&pts).unwrap(), nearest_two_brute(&pts, Metric::Euclidean).unwrap());
        // collinear points
        let line: Vec<Complex64> = (0..200).map(|i| c((i * i) as f64 * 0.01, 0.0)).collect();
        assert_eq!(nearest_two(&line).unwrap(), nearest_two_brute(&line, Metric::Euclidean).unwrap());
    }

    #[test]
    fn torus_metric_uses_minimum_image() {
        let m = Metric::Torus { period: 2.0 * PI };
        let d = m.displacement(c(3.0, -3.0), c(-3.0, 3.0));
        assert!((d - c(2.0 * PI - 6.0, 6.0 - 2.0 * PI)).norm() < 1e-12);
    }

    #[test]
    fn flat_disk_mean_radius() {
        let pts = uniform_points(100_000, 7);
        let res = complex_spacing_ratios(&pts).unwrap();
        let stats = summary_stats(&res.samples, res.skipped).unwrap();
        assert!((stats.mean_r - 2.0 / 3.0).abs() < 0.01, "{stats:?}");
        assert!(stats.mean_cos_theta.abs() < 0.01, "{stats:?}");
    }

    #[test]
    fn repeated_sample_histogram_normalizes() {
        let s = vec![RatioSample::new(c(0.3, 0.4)); 17];
        let (th, r) = marginals(&s, 0, DEFAULT_BINS).unwrap();
        assert!((th.integral() - 1.0).abs() < 1e-12);
        assert!((r.integral() - 1.0).abs() < 1e-12);
        assert_eq!(r.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert!(marginals(&s, 0, 0).is_err());
        assert!(marginals(&[], 0, 10).is_err());
    }

    #[test]
    fn all_samples_at_one() {
        let s = vec![RatioSample::new(c(1.0, 0.0)); 5];
        let st = summary_stats(&s, 0).unwrap();
        assert_eq!(st.mean_r, 1.0);
        assert_eq!(st.mean_cos_theta, 1.0);
    }

    #[test]
    fn theta_boundary_maps_into_half_open_interval() {
        let s = RatioSample::new(c(-1.0, -0.0));
        assert_eq!(s.theta, PI);
    }

    #[test]
    fn exponent_fit_recovers_power_law() {
        // inverse-CDF samples of ρ(r) ∝ r^3 on [0, 1]
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<RatioSample> = (0..20_000)
            .map(|_| RatioSample::new(c(rng.random::<f64>().powf(0.25), 0.0)))
            .collect();
        let (a, se, _) = small_r_exponent(&s, 0.5).unwrap();
        assert!((a - 3.0).abs() < 4.0 * se, "{a} ± {se}");
    }

    #[test]
    fn flat_angles_pass_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s: Vec<RatioSample> = (0..50_000)
            .map(|_| RatioSample::new(Complex64::from_polar(0.5, rng.random_range(-PI..PI))))
            .collect();
        let (th, _) = marginals(&s, 0, 40).unwrap();
        let t = angular_flatness_test(&th).unwrap();
        assert!(t.p_value > 1e-3, "{t:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn invariant_under_affine_maps(seed in 0u64..1000, a_re in -5.0..5.0f64, a_im in -5.0..5.0f64,
                                       b in prop_oneof![0.1..10.0f64, -10.0..-0.1f64], phi in -PI..PI) {
            let pts = uniform_points(60, seed);
            let base = complex_spacing_ratios(&pts).unwrap();
            let shift = c(a_re, a_im);
            let mapped: Vec<Complex64> = pts.iter().map(|&p| shift + p * b).collect();
            let rotated: Vec<Complex64> = pts.iter().map(|&p| p * Complex64::from_polar(1.0, phi)).collect();
            for other in [complex_spacing_ratios(&mapped).unwrap(), complex_spacing_ratios(&rotated).unwrap()] {
                prop_assert_eq!(other.samples.len(), base.samples.len());
                for (x, y) in base.samples.iter().zip(&other.samples) {
                    prop_assert!((x.z - y.z).norm() < 1e-12);
                }
            }
        }

        #[test]
        fn radius_never_exceeds_one(seed in 0u64..1000, n in 3usize..200) {
            let pts = uniform_points(n, seed);
            for s in complex_spacing_ratios(&pts).unwrap().samples {
                prop_assert!(s.r <= 1.0 + 1e-12);
                prop_assert!(s.theta > -PI && s.theta <= PI);
            }
        }
    }
}
