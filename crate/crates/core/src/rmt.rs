//! Reference ensembles for spacing-ratio statistics: Poisson points, GinUE,
//! AI† and AII† matrices, and the toroidal unitary ensemble (TUE).

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csr::{self, Axis, CsrOptions, CsrResult, Metric, RatioSample};
use crate::error::{Error, Result};
use crate::spectral::dense_eigenvalues;

pub const DESK_MATRIX_SIZE: usize = 512;
pub const DESK_REALIZATIONS: usize = 64;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Poisson,
    Ginue,
    AiDagger,
    AiiDagger,
    Tue,
}

impl std::str::FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "poisson" => Ok(EnsembleKind::Poisson),
            "ginue" => Ok(EnsembleKind::Ginue),
            "ai_dagger" | "aid" => Ok(EnsembleKind::AiDagger),
            "aii_dagger" | "aiid" => Ok(EnsembleKind::AiiDagger),
            "tue" => Ok(EnsembleKind::Tue),
            other => Err(Error::invalid(format!("unknown ensemble '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    #[serde(rename = "N")]
    pub n: usize,
    pub realizations: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(kind: EnsembleKind, n: usize, realizations: usize, seed: u64) -> Self {
        EnsembleSpec {
            kind,
            n,
            realizations,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::invalid(format!("N must be at least 3, got {}", self.n)));
        }
        if self.realizations == 0 {
            return Err(Error::invalid("realizations must be positive"));
        }
        if self.kind == EnsembleKind::AiiDagger && self.n % 2 != 0 {
            return Err(Error::invalid(format!("aii_dagger needs even N, got {}", self.n)));
        }
        Ok(())
    }
}

/// Generator for one realization: the seed picks the key, the index picks the stream.
pub fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn complex_gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `J Aᵀ Jᵀ` with `J = [[0, I], [-I, 0]]`.
pub fn symplectic_dual(a: &Mat<Complex64>) -> Mat<Complex64> {
    let n = a.nrows() / 2;
    let partner = |i: usize| if i < n { (i + n, 1.0) } else { (i - n, -1.0) };
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        let (pi, si) = partner(i);
        let (pj, sj) = partner(j);
        a[(pj, pi)] * (si * sj)
    })
}

pub fn sample_matrix(spec: &EnsembleSpec, index: u64) -> Result<Mat<Complex64>> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = realization_rng(spec.seed, index);
    match spec.kind {
        EnsembleKind::Ginue => {
            let mut a = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = complex_gaussian(&mut rng);
                }
            }
            Ok(a)
        }
        EnsembleKind::AiDagger => {
            let mut a = Mat::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = complex_gaussian(&mut rng);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            Ok(a)
        }
        EnsembleKind::AiiDagger => {
            let mut b = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    b[(i, j)] = complex_gaussian(&mut rng);
                }
            }
            let dual = symplectic_dual(&b);
            Ok(Mat::from_fn(n, n, |i, j| b[(i, j)] + dual[(i, j)]))
        }
        kind => Err(Error::invalid(format!("{kind:?} is not a matrix ensemble"))),
    }
}

/// Point set of one realization: eigenvalues, or uniform points in the unit square for Poisson.
pub fn sample_points(spec: &EnsembleSpec, index: u64) -> Result<Vec<Complex64>> {
    match spec.kind {
        EnsembleKind::Poisson => {
            spec.validate()?;
            let mut rng = realization_rng(spec.seed, index);
            Ok((0..spec.n).map(|_| Complex64::new(rng.random(), rng.random())).collect())
        }
        EnsembleKind::Tue => Err(Error::invalid("tue points come from tue_metropolis")),
        _ => dense_eigenvalues(&sample_matrix(spec, index)?),
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EnsembleCsr {
    pub csr: CsrResult,
    /// Per-realization results, in realization order.
    pub groups: Vec<CsrResult>,
    pub failures: usize,
}

/// CSR samples of every realization, concatenated in realization order.
pub fn ensemble_csr(spec: &EnsembleSpec) -> Result<EnsembleCsr> {
    spec.validate()?;
    if spec.kind == EnsembleKind::Tue {
        let settings = MetropolisSettings::for_points(spec.n);
        return Ok(tue_metropolis_csr(spec, &settings)?.into_ensemble());
    }
    let per: Vec<Result<CsrResult>> = (0..spec.realizations as u64)
        .into_par_iter()
        .map(|i| sample_points(spec, i).and_then(|pts| csr::complex_spacing_ratios(&pts)))
        .collect();
    let mut out = EnsembleCsr::default();
    for (i, r) in per.into_iter().enumerate() {
        match r {
            Ok(res) => {
                out.csr.extend(res.clone());
                out.groups.push(res);
            }
            Err(Error::Numerical(msg)) => {
                log::warn!("realization {i} skipped: {msg}");
                out.failures += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if out.groups.is_empty() {
        return Err(Error::numerical("every realization failed"));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Toroidal unitary ensemble

#[inline]
fn principal(x: f64) -> f64 {
    let w = csr::wrap(x, TWO_PI);
    // wrap gives [-π, π); move -π to π
    if w <= -PI {
        PI
    } else {
        w
    }
}

#[inline]
fn pair_factor(dt: f64, dp: f64) -> f64 {
    2.0 - dt.cos() - dp.cos()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusConfiguration {
    pub thetas: Vec<f64>,
    pub phis: Vec<f64>,
}

impl TorusConfiguration {
    pub fn new(thetas: Vec<f64>, phis: Vec<f64>) -> Result<Self> {
        if thetas.len() != phis.len() {
            return Err(Error::invalid("theta and phi lists differ in length"));
        }
        if thetas.iter().chain(&phis).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite angle"));
        }
        Ok(TorusConfiguration {
            thetas: thetas.into_iter().map(principal).collect(),
            phis: phis.into_iter().map(principal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// `ϑ_j + iφ_j`.
    pub fn to_points(&self) -> Vec<Complex64> {
        self.thetas.iter().zip(&self.phis).map(|(&t, &p)| Complex64::new(t, p)).collect()
    }

    /// `ln Π_{j<k} (2 - cos(ϑ_j-ϑ_k) - cos(φ_j-φ_k))`, `-∞` at coincident points.
    pub fn log_density(&self) -> f64 {
        let n = self.len();
        let mut acc = 0.0;
        for j in 0..n {
            for k in j + 1..n {
                acc += pair_factor(self.thetas[j] - self.thetas[k], self.phis[j] - self.phis[k]).ln();
            }
        }
        acc
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = || -> Vec<f64> { (0..n).map(|_| principal(rng.random_range(-PI..PI))).collect() };
        let thetas = draw();
        let phis = draw();
        TorusConfiguration { thetas, phis }
    }
}

pub fn torus_csr_options() -> CsrOptions {
    CsrOptions {
        metric: Metric::Torus { period: TWO_PI },
        degeneracy_tolerance: 0.0,
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MetropolisSettings {
    /// Sweeps per chain, including burn-in. One sweep is `N` single-point proposals.
    pub steps: usize,
    pub burn_in: usize,
    /// Half-width of the uniform angular proposal.
    pub step_size: f64,
    pub metric: Metric,
}

impl MetropolisSettings {
    pub fn for_points(n: usize) -> Self {
        MetropolisSettings {
            steps: 20_000,
            burn_in: 1_000,
            step_size: (TWO_PI / (n as f64).sqrt()).min(PI),
            metric: Metric::Torus { period: TWO_PI },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps <= self.burn_in {
            return Err(Error::invalid(format!(
                "steps ({}) must exceed burn_in ({})",
                self.steps, self.burn_in
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step size must be positive"));
        }
        Ok(())
    }
}

/// Runs one chain and hands every retained configuration to `visit`.
/// Returns the acceptance rate.
fn run_chain(
    n: usize,
    settings: &MetropolisSettings,
    rng: &mut ChaCha8Rng,
    mut visit: impl FnMut(&TorusConfiguration),
) -> f64 {
    let mut state = TorusConfiguration::random(n, rng);
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    let w = settings.step_size;
    for sweep in 0..settings.steps {
        for _ in 0..n {
            let j = rng.random_range(0..n);
            let nt = principal(state.thetas[j] + rng.random_range(-w..w));
            let np = principal(state.phis[j] + rng.random_range(-w..w));
            let mut log_ratio = 0.0;
            for k in 0..n {
                if k != j {
                    let new = pair_factor(nt - state.thetas[k], np - state.phis[k]);
                    let old = pair_factor(state.thetas[j] - state.thetas[k], state.phis[j] - state.phis[k]);
                    log_ratio += new.ln() - old.ln();
                }
            }
            proposed += 1;
            let u: f64 = rng.random();
            if log_ratio >= 0.0 || u.ln() < log_ratio {
                state.thetas[j] = nt;
                state.phis[j] = np;
                accepted += 1;
            }
        }
        if sweep >= settings.burn_in {
            visit(&state);
        }
    }
    accepted as f64 / proposed as f64
}

fn check_acceptance(rate: f64) {
    if !(0.1..=0.9).contains(&rate) {
        log::warn!(
            "metropolis acceptance rate {rate:.3} outside [0.1, 0.9]; {} the step size",
            if rate < 0.1 { "decrease" } else { "increase" }
        );
    }
}

/// Retained configurations of `spec.realizations` independent chains, chain by chain.
pub fn tue_metropolis(spec: &EnsembleSpec, steps: usize, burn_in: usize) -> Result<Vec<TorusConfiguration>> {
    spec.validate()?;
    let settings = MetropolisSettings {
        steps,
        burn_in,
        ..MetropolisSettings::for_points(spec.n)
    };
    settings.validate()?;
    let chains: Vec<(Vec<TorusConfiguration>, f64)> = (0..spec.realizations as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = realization_rng(spec.seed, c);
            let mut kept = Vec::with_capacity(steps - burn_in);
            let rate = run_chain(spec.n, &settings, &mut rng, |s| kept.push(s.clone()));
            (kept, rate)
        })
        .collect();
    let rate = chains.iter().map(|c| c.1).sum::<f64>() / chains.len() as f64;
    log::info!("tue metropolis N={} acceptance rate {rate:.3}", spec.n);
    check_acceptance(rate);
    Ok(chains.into_iter().flat_map(|c| c.0).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TueChains {
    pub chains: Vec<CsrResult>,
    pub acceptance_rate: f64,
}

impl TueChains {
    pub fn into_ensemble(self) -> EnsembleCsr {
        let mut csr = CsrResult::default();
        for c in &self.chains {
            csr.extend(c.clone());
        }
        EnsembleCsr {
            csr,
            groups: self.chains,
            failures: 0,
        }
    }
}

/// Metropolis chains with the CSR of every point of every retained configuration.
pub fn tue_metropolis_csr(spec: &EnsembleSpec, settings: &MetropolisSettings) -> Result<TueChains> {
    spec.validate()?;
    settings.validate()?;
    let opts = CsrOptions {
        metric: settings.metric,
        degeneracy_tolerance: 0.0,
    };
    let chains: Vec<Result<(CsrResult, f64)>> = (0..spec.realizations as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = realization_rng(spec.seed, c);
            let mut out = CsrResult::default();
            let mut err = None;
            let rate = run_chain(spec.n, settings, &mut rng, |s| {
                match csr::complex_spacing_ratios_with(&s.to_points(), &opts) {
                    Ok(r) => out.extend(r),
                    Err(e) => err = Some(e),
                }
            });
            match err {
                Some(e) => Err(e),
                None => Ok((out, rate)),
            }
        })
        .collect();
    let chains = chains.into_iter().collect::<Result<Vec<_>>>()?;
    let rate = chains.iter().map(|c| c.1).sum::<f64>() / chains.len() as f64;
    log::info!("tue metropolis N={} acceptance rate {rate:.3}", spec.n);
    check_acceptance(rate);
    Ok(TueChains {
        chains: chains.into_iter().map(|c| c.0).collect(),
        acceptance_rate: rate,
    })
}

/// Exact samples of `P_TUE` by rejection from the uniform measure (each pair factor is at most 4).
/// Only practical for a handful of points.
pub fn tue_rejection_samples(n: usize, count: usize, seed: u64) -> Result<Vec<TorusConfiguration>> {
    if !(3..=6).contains(&n) {
        return Err(Error::invalid(format!("rejection sampling supports 3 <= N <= 6, got {n}")));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let log_max = pairs * 4f64.ln();
    let mut rng = realization_rng(seed, 0);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let c = TorusConfiguration::random(n, &mut rng);
        let u: f64 = rng.random();
        if u.ln() < c.log_density() - log_max {
            out.push(c);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Surmise integral

/// Two readings of the integral: the printed one uses `(s²+t²)²` and no
/// constraint on the nearest neighbour; the change of variables from the
/// nearest-neighbour position `w = u z` gives `(s²+t²)¹`, and the minimum-image
/// convention needs `u z` itself to lie in the fundamental square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurmiseOptions {
    pub jacobian_power: i32,
    pub nearest_in_cell: bool,
}

impl SurmiseOptions {
    pub const PRINTED: SurmiseOptions = SurmiseOptions {
        jacobian_power: 2,
        nearest_in_cell: false,
    };
    pub const MINIMUM_IMAGE: SurmiseOptions = SurmiseOptions {
        jacobian_power: 1,
        nearest_in_cell: true,
    };
}

impl Default for SurmiseOptions {
    fn default() -> Self {
        SurmiseOptions::MINIMUM_IMAGE
    }
}

/// One Monte Carlo draw of the outer angles with its `z`-independent weight.
struct SurmiseDraw {
    s: f64,
    t: f64,
    others: Vec<(f64, f64)>,
    weight: f64,
}

fn surmise_draw(n: usize, rng: &mut ChaCha8Rng, opts: &SurmiseOptions) -> SurmiseDraw {
    let s = rng.random_range(-PI..PI);
    let t = rng.random_range(-PI..PI);
    let others: Vec<(f64, f64)> = (0..n - 3)
        .map(|_| (rng.random_range(-PI..PI), rng.random_range(-PI..PI)))
        .collect();
    let u2 = s * s + t * t;
    if others.iter().any(|&(a, b)| a * a + b * b < u2) {
        return SurmiseDraw { s, t, others, weight: 0.0 };
    }
    let mut weight = u2.powi(opts.jacobian_power) * pair_factor(s, t);
    for (j, &(a, b)) in others.iter().enumerate() {
        weight *= pair_factor(a, b) * pair_factor(s - a, t - b);
        for &(a2, b2) in &others[j + 1..] {
            weight *= pair_factor(a - a2, b - b2);
        }
    }
    SurmiseDraw { s, t, others, weight }
}

#[inline]
fn surmise_factor(d: &SurmiseDraw, x: f64, y: f64, opts: &SurmiseOptions) -> f64 {
    if d.weight == 0.0 {
        return 0.0;
    }
    let wx = d.s * x - d.t * y;
    let wy = d.t * x + d.s * y;
    if opts.nearest_in_cell && (wx.abs() > PI || wy.abs() > PI) {
        return 0.0;
    }
    let mut f = d.weight * pair_factor(wx, wy) * pair_factor(wx - d.s, wy - d.t);
    for &(a, b) in &d.others {
        f *= pair_factor(wx - a, wy - b);
    }
    f
}

fn check_surmise_args(n: usize, mc_samples: usize) -> Result<()> {
    if !(3..=5).contains(&n) {
        return Err(Error::invalid(format!("surmise supports N in 3..=5, got {n}")));
    }
    if mc_samples < 10_000 {
        return Err(Error::invalid(format!("need at least 1e4 Monte Carlo samples, got {mc_samples}")));
    }
    Ok(())
}

/// Unnormalized surmise `ρ(x, y)` as a Monte Carlo mean over uniform angles, with its standard error.
pub fn tue_surmise_density(x: f64, y: f64, n: usize, mc_samples: usize, seed: u64) -> Result<(f64, f64)> {
    tue_surmise_density_with(x, y, n, mc_samples, seed, &SurmiseOptions::default())
}

pub fn tue_surmise_density_with(
    x: f64,
    y: f64,
    n: usize,
    mc_samples: usize,
    seed: u64,
    opts: &SurmiseOptions,
) -> Result<(f64, f64)> {
    check_surmise_args(n, mc_samples)?;
    let mut rng = realization_rng(seed, 0);
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..mc_samples {
        let d = surmise_draw(n, &mut rng, opts);
        let f = surmise_factor(&d, x, y, opts);
        sum += f;
        sum2 += f * f;
    }
    let m = mc_samples as f64;
    let mean = sum / m;
    let var = (sum2 / m - mean * mean).max(0.0) * m / (m - 1.0);
    Ok((mean, (var / m).sqrt()))
}

/// Binned marginal density with per-bin standard errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BinnedMarginal {
    pub axis: Axis,
    pub bin_edges: Vec<f64>,
    pub density: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl BinnedMarginal {
    fn edges(axis: Axis, bins: usize) -> Vec<f64> {
        let (lo, hi) = match axis {
            Axis::Angle => (-PI, PI),
            Axis::Radius => (0.0, 1.0),
        };
        (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
    }

    /// Mean over groups of the per-group histograms, with the standard error of that mean.
    pub fn from_groups(axis: Axis, bins: usize, groups: &[&[RatioSample]]) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::invalid("need at least two groups for an error estimate"));
        }
        let per: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| {
                let (th, r) = csr::marginals(g, 0, bins)?;
                Ok(match axis {
                    Axis::Angle => th.densities,
                    Axis::Radius => r.densities,
                })
            })
            .collect::<Result<_>>()?;
        let (density, stderr) = mean_and_stderr(&per);
        Ok(BinnedMarginal {
            axis,
            bin_edges: Self::edges(axis, bins),
            density,
            stderr,
        })
    }

    pub fn bins(&self) -> usize {
        self.density.len()
    }

    /// Per-bin `(a - b) / sqrt(σa² + σb²)`.
    pub fn z_scores(&self, other: &BinnedMarginal) -> Result<Vec<f64>> {
        if self.axis != other.axis || self.bins() != other.bins() {
            return Err(Error::invalid("marginals have different binning"));
        }
        Ok((0..self.bins())
            .map(|i| {
                let s = self.stderr[i].hypot(other.stderr[i]);
                let d = self.density[i] - other.density[i];
                if s == 0.0 {
                    if d == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    d / s
                }
            })
            .collect())
    }

    /// `Σ |a - b| · width`.
    pub fn l1_distance(&self, other: &BinnedMarginal) -> f64 {
        self.bin_edges
            .windows(2)
            .zip(self.density.iter().zip(&other.density))
            .map(|(w, (a, b))| (a - b).abs() * (w[1] - w[0]))
            .sum()
    }
}

fn mean_and_stderr(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let g = rows.len() as f64;
    let bins = rows[0].len();
    let mean: Vec<f64> = (0..bins).map(|b| rows.iter().map(|r| r[b]).sum::<f64>() / g).collect();
    let se = (0..bins)
        .map(|b| {
            let v = rows.iter().map(|r| (r[b] - mean[b]).powi(2)).sum::<f64>() / (g - 1.0);
            (v / g).sqrt()
        })
        .collect();
    (mean, se)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SurmiseGrid {
    /// Intervals per marginal bin along each polar axis.
    pub refinement: usize,
    /// Independent batches for the error estimate.
    pub batches: usize,
}

impl Default for SurmiseGrid {
    fn default() -> Self {
        SurmiseGrid {
            refinement: 4,
            batches: 16,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurmiseMarginals {
    #[serde(rename = "N")]
    pub n: usize,
    pub theta: BinnedMarginal,
    pub radius: BinnedMarginal,
    pub options: SurmiseOptions,
}

/// Angular and radial marginals of the surmise, normalized by trapezoidal
/// quadrature on a polar grid over the unit disk. Every grid node shares the
/// same draws; errors come from independent batches.
pub fn tue_surmise_marginals(
    n: usize,
    bins: usize,
    mc_samples: usize,
    seed: u64,
    grid: &SurmiseGrid,
    opts: &SurmiseOptions,
) -> Result<SurmiseMarginals> {
    check_surmise_args(n, mc_samples)?;
    if bins == 0 || grid.refinement == 0 || grid.batches < 2 {
        return Err(Error::invalid("bins, refinement and batches must be positive (batches >= 2)"));
    }
    let nr = bins * grid.refinement;
    let nt = bins * grid.refinement;
    let dr = 1.0 / nr as f64;
    let dt = TWO_PI / nt as f64;
    // nodes r_i = i dr (i = 1..=nr; r = 0 carries no weight), θ_j = -π + j dt (periodic)
    let nodes: Vec<(f64, f64)> = (1..=nr)
        .flat_map(|i| {
            (0..nt).map(move |j| {
                let r = i as f64 * dr;
                let th = -PI + j as f64 * dt;
                (r * th.cos(), r * th.sin())
            })
        })
        .collect();
    let per_batch = mc_samples.div_ceil(grid.batches);

    let batch_sums: Vec<Vec<f64>> = (0..grid.batches as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = realization_rng(seed, b);
            let mut acc = vec![0.0; nodes.len()];
            for _ in 0..per_batch {
                let d = surmise_draw(n, &mut rng, opts);
                if d.weight == 0.0 {
                    continue;
                }
                for (a, &(x, y)) in acc.iter_mut().zip(&nodes) {
                    *a += surmise_factor(&d, x, y, opts);
                }
            }
            acc
        })
        .collect();

    let marginals_of = |rho: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        // polar density q(r, θ) = r ρ; trapezoid in r (q = 0 at r = 0), periodic trapezoid in θ
        let q = |i: usize, j: usize| -> f64 {
            if i == 0 {
                0.0
            } else {
                i as f64 * dr * rho[(i - 1) * nt + j % nt]
            }
        };
        let cell = |i: usize, j: usize| -> f64 {
            0.25 * dr * dt * (q(i, j) + q(i + 1, j) + q(i, j + 1) + q(i + 1, j + 1))
        };
        let mut theta = vec![0.0; bins];
        let mut radius = vec![0.0; bins];
        for i in 0..nr {
            for j in 0..nt {
                let c = cell(i, j);
                theta[j / grid.refinement] += c;
                radius[i / grid.refinement] += c;
            }
        }
        let total: f64 = theta.iter().sum();
        if !(total > 0.0) {
            return Err(Error::numerical("surmise integral vanished on the grid"));
        }
        let wt = TWO_PI / bins as f64;
        let wr = 1.0 / bins as f64;
        Ok((
            theta.into_iter().map(|m| m / (total * wt)).collect(),
            radius.into_iter().map(|m| m / (total * wr)).collect(),
        ))
    };

    let mut thetas = Vec::with_capacity(grid.batches);
    let mut radii = Vec::with_capacity(grid.batches);
    for sums in &batch_sums {
        let (t, r) = marginals_of(sums)?;
        thetas.push(t);
        radii.push(r);
    }
    let pooled: Vec<f64> = (0..nodes.len()).map(|k| batch_sums.iter().map(|s| s[k]).sum()).collect();
    let (theta, radius) = marginals_of(&pooled)?;
    let (_, theta_se) = mean_and_stderr(&thetas);
    let (_, radius_se) = mean_and_stderr(&radii);
    Ok(SurmiseMarginals {
        n,
        theta: BinnedMarginal {
            axis: Axis::Angle,
            bin_edges: BinnedMarginal::edges(Axis::Angle, bins),
            density: theta,
            stderr: theta_se,
        },
        radius: BinnedMarginal {
            axis: Axis::Radius,
            bin_edges: BinnedMarginal::edges(Axis::Radius, bins),
            density: radius,
            stderr: radius_se,
        },
        options: *opts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: EnsembleKind, n: usize) -> EnsembleSpec {
        EnsembleSpec::new(kind, n, 4, 42)
    }

    #[test]
    fn spec_validation() {
        assert!(spec(EnsembleKind::Ginue, 2).validate().is_err());
        assert!(spec(EnsembleKind::AiiDagger, 5).validate().is_err());
        assert!(EnsembleSpec::new(EnsembleKind::Ginue, 8, 0, 1).validate().is_err());
        assert!(sample_matrix(&spec(EnsembleKind::Poisson, 8), 0).is_err());
    }

    #[test]
    fn ai_dagger_is_exactly_symmetric() {
        let a = sample_matrix(&spec(EnsembleKind::AiDagger, 40), 3).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(a[(i, j)], a[(j, i)]);
            }
        }
    }

    #[test]
    fn aii_dagger_is_exactly_self_dual() {
        for n in [4, 30] {
            let a = sample_matrix(&spec(EnsembleKind::AiiDagger, n), 1).unwrap();
            let d = symplectic_dual(&a);
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(a[(i, j)], d[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn symplectic_dual_is_an_involution() {
        let b = sample_matrix(&spec(EnsembleKind::Ginue, 6), 0).unwrap();
        let dd = symplectic_dual(&symplectic_dual(&b));
        assert_eq!(dd, b);
    }

    #[test]
    fn ginue_obeys_circular_law() {
        let n = 512;
        let ev = sample_points(&EnsembleSpec::new(EnsembleKind::Ginue, n, 1, 9), 0).unwrap();
        let outside = ev.iter().filter(|z| z.norm() > 1.05 * (n as f64).sqrt()).count();
        assert!((outside as f64) < 0.01 * n as f64, "{outside}");
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let s = spec(EnsembleKind::Ginue, 10);
        assert_eq!(sample_matrix(&s, 2).unwrap(), sample_matrix(&s, 2).unwrap());
        assert_ne!(sample_matrix(&s, 2).unwrap(), sample_matrix(&s, 3).unwrap());
        let p = spec(EnsembleKind::Poisson, 100);
        let a = ensemble_csr(&p).unwrap();
        let b = ensemble_csr(&p).unwrap();
        assert_eq!(a.csr.samples, b.csr.samples);
        assert_eq!(a.groups.len(), 4);
    }

    #[test]
    fn tue_density_symmetries() {
        let mut rng = realization_rng(5, 0);
        let c = TorusConfiguration::random(6, &mut rng);
        let base = c.log_density();
        let shifted = TorusConfiguration::new(
            c.thetas.iter().map(|t| t + 0.7).collect(),
            c.phis.iter().map(|p| p - 2.1).collect(),
        )
        .unwrap();
        assert!((shifted.log_density() - base).abs() < 1e-12);
        let mut swapped = c.clone();
        swapped.thetas.swap(1, 4);
        swapped.phis.swap(1, 4);
        assert!((swapped.log_density() - base).abs() < 1e-12);
    }

    #[test]
    fn angles_wrap_to_principal_interval() {
        let c = TorusConfiguration::new(vec![-PI, 3.0 * PI, 0.5], vec![7.0, -7.0, PI]).unwrap();
        for v in c.thetas.iter().chain(&c.phis) {
            assert!(*v > -PI && *v <= PI, "{v}");
        }
        assert_eq!(c.thetas[0], PI);
        assert!(TorusConfiguration::new(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn metropolis_rejects_bad_schedule() {
        let s = spec(EnsembleKind::Tue, 3);
        assert!(tue_metropolis(&s, 10, 10).is_err());
        let configs = tue_metropolis(&s, 30, 10).unwrap();
        assert_eq!(configs.len(), 4 * 20);
        assert!(configs.iter().all(|c| c.len() == 3));
    }

    #[test]
    fn surmise_is_nonnegative_and_reflection_symmetric() {
        for opts in [SurmiseOptions::PRINTED, SurmiseOptions::MINIMUM_IMAGE] {
            for &(x, y) in &[(0.3, 0.4), (-0.5, 0.2), (0.1, -0.8)] {
                let (a, ea) = tue_surmise_density_with(x, y, 4, 40_000, 3, &opts).unwrap();
                let (b, eb) = tue_surmise_density_with(x, -y, 4, 40_000, 4, &opts).unwrap();
                assert!(a >= 0.0 && b >= 0.0);
                assert!((a - b).abs() < 4.0 * ea.hypot(eb), "{a} ± {ea} vs {b} ± {eb}");
            }
        }
        assert!(tue_surmise_density(0.1, 0.1, 6, 20_000, 0).is_err());
        assert!(tue_surmise_density(0.1, 0.1, 3, 100, 0).is_err());
    }

    #[test]
    fn surmise_marginals_are_normalized() {
        let m = tue_surmise_marginals(3, 8, 20_000, 1, &SurmiseGrid::default(), &SurmiseOptions::default()).unwrap();
        let w = TWO_PI / 8.0;
        assert!((m.theta.density.iter().sum::<f64>() * w - 1.0).abs() < 1e-12);
        assert!((m.radius.density.iter().sum::<f64>() / 8.0 - 1.0).abs() < 1e-12);
    }
}
