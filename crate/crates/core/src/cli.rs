//! Command-line front end. Flags override values from `--config`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize};

use crate::basis::{build_reduced_basis, Momentum, Parity, SymmetrySector};
use crate::csr::{self, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::io::{self, Artifact, RunManifest, TOOL_VERSION};
use crate::liouvillian::{build_liouvillian_full, build_liouvillian_sector, ModelParams, SuperOperatorMatrix};
use crate::perturbation::{cluster_match, stripe_prediction};
use crate::rmt::{self, EnsembleKind, EnsembleSpec, SurmiseGrid, SurmiseOptions};
use crate::spectral::{self, validate_spectrum, ValidationTolerances};

pub const THREADS_ENV: &str = "HCB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hcb", version, about = "Lindbladian spectra and complex spacing ratios of driven-dissipative hard-core bosons")]
pub struct Cli {
    /// JSON file with default values for any flag (keys as in the flag names, e.g. "gamma_p").
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reduced basis dimension and orbit statistics of a sector.
    Basis(Options),
    /// Eigenvalues of the full Lindbladian or one symmetry block.
    Spectrum(Options),
    /// Sparse Lindbladian block as (row, col, re, im) triplets.
    Matrix(Options),
    /// Complex spacing ratios of a spectrum file or a reference ensemble.
    Csr(Options),
    /// Grid-normalized TUE surmise marginals.
    Surmise(Options),
    /// Predicted dissipative stripes and their match to the computed spectrum.
    Stripes(Options),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Basis(_) => "basis",
            Command::Spectrum(_) => "spectrum",
            Command::Matrix(_) => "matrix",
            Command::Csr(_) => "csr",
            Command::Surmise(_) => "surmise",
            Command::Stripes(_) => "stripes",
        }
    }

    fn options(&self) -> &Options {
        match self {
            Command::Basis(o)
            | Command::Spectrum(o)
            | Command::Matrix(o)
            | Command::Csr(o)
            | Command::Surmise(o)
            | Command::Stripes(o) => o,
        }
    }
}

fn parity_from_str<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Parity>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    s.map(|v| v.parse().map_err(serde::de::Error::custom)).transpose()
}

fn momentum_from_json<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Momentum>, D::Error> {
    let v: Option<serde_json::Value> = Option::deserialize(d)?;
    match v {
        None => Ok(None),
        Some(serde_json::Value::Number(n)) => n
            .as_u64()
            .map(|k| Some(Momentum::Index(k as u32)))
            .ok_or_else(|| serde::de::Error::custom("momentum must be a non-negative integer")),
        Some(serde_json::Value::String(s)) => s.parse().map(Some).map_err(serde::de::Error::custom),
        Some(other) => Err(serde::de::Error::custom(format!("bad momentum {other}"))),
    }
}

#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// Number of sites.
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub sites: Option<u32>,
    /// Super-particle number N_ket - N_bra; omit for the full Lindbladian.
    #[arg(long = "M", allow_hyphen_values = true)]
    #[serde(rename = "M")]
    pub m: Option<i32>,
    /// Momentum index or "all".
    #[arg(long)]
    #[serde(deserialize_with = "momentum_from_json")]
    pub k: Option<Momentum>,
    /// +, - or none.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(deserialize_with = "parity_from_str")]
    pub parity: Option<Parity>,
    #[arg(long = "J", allow_hyphen_values = true)]
    #[serde(rename = "J")]
    pub hopping: Option<f64>,
    #[arg(long = "gamma-p", allow_hyphen_values = true)]
    pub gamma_p: Option<f64>,
    #[arg(long = "gamma-l", allow_hyphen_values = true)]
    pub gamma_l: Option<f64>,
    /// Hopping prefactor (1: hard-core boson units, 4: Pauli-matrix units).
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// poisson, ginue, ai_dagger, aii_dagger or tue.
    #[arg(long)]
    pub ensemble: Option<String>,
    /// Matrix size or number of torus points.
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub realizations: Option<usize>,
    /// Spectrum CSV with `re,im` columns.
    #[arg(long)]
    pub spectrum: Option<PathBuf>,
    #[arg(long = "mc-samples")]
    pub mc_samples: Option<usize>,
    /// Cluster separation when the stripes coincide.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! merge_fields {
    ($a:expr, $b:expr; $($f:ident),*) => {
        Options { $($f: $a.$f.clone().or_else(|| $b.$f.clone()),)* }
    };
}

impl Options {
    /// Values set here win over `defaults`.
    pub fn or(&self, defaults: &Options) -> Options {
        merge_fields!(self, defaults; sites, m, k, parity, hopping, gamma_p, gamma_l, scale, seed, bins,
            ensemble, n, realizations, spectrum, mc_samples, tolerance, out)
    }

    fn require<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
        v.clone().ok_or_else(|| Error::invalid(format!("missing --{flag}")))
    }

    fn sites(&self) -> Result<u32> {
        Self::require(&self.sites, "L")
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn params(&self) -> Result<ModelParams> {
        let p = ModelParams::new(
            self.sites()?,
            self.hopping.unwrap_or(1.0),
            self.gamma_p.unwrap_or(0.0),
            self.gamma_l.unwrap_or(0.0),
        )
        .with_scale(self.scale.unwrap_or(1.0));
        p.validate()?;
        Ok(p)
    }

    fn sector(&self) -> Option<SymmetrySector> {
        self.m.map(|m| {
            SymmetrySector::new(m, self.k.unwrap_or(Momentum::All), self.parity.unwrap_or(Parity::None))
        })
    }
}

pub fn load_config(path: &Path) -> Result<Options> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Io(_) | Error::Json(_) => 2,
        Error::Numerical(_) => 3,
        Error::Validation(_) => 4,
    }
}

struct Run {
    dir: PathBuf,
    artifacts: Vec<PathBuf>,
}

impl Run {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Run {
            dir,
            artifacts: Vec::new(),
        })
    }

    fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.artifacts.push(p.clone());
        p
    }
}

/// Runs a parsed command line and writes its outputs.
pub fn run(cli: &Cli, args: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let flags = cli.command.options();
    let opts = match &cli.config {
        Some(path) => flags.or(&load_config(path)?),
        None => flags.clone(),
    };
    let mut run = Run::new(opts.out_dir())?;
    let (params, sector, seed, outcome) = match &cli.command {
        Command::Basis(_) => (None, cmd_basis(&opts, &mut run).map(Some)?, None, Ok(())),
        Command::Spectrum(_) => {
            let (p, s, outcome) = cmd_spectrum(&opts, &mut run)?;
            (Some(serde_json::to_value(p)?), s, None, outcome)
        }
        Command::Matrix(_) => {
            let (p, s) = cmd_matrix(&opts, &mut run)?;
            (Some(serde_json::to_value(p)?), s, None, Ok(()))
        }
        Command::Csr(_) => {
            let value = cmd_csr(&opts, &mut run)?;
            (value, None, opts.seed, Ok(()))
        }
        Command::Surmise(_) => {
            let value = cmd_surmise(&opts, &mut run)?;
            (Some(value), None, opts.seed, Ok(()))
        }
        Command::Stripes(_) => {
            let (p, s) = cmd_stripes(&opts, &mut run)?;
            (Some(serde_json::to_value(p)?), s, None, Ok(()))
        }
    };
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        args,
        params: params.unwrap_or(serde_json::Value::Null),
        sector,
        seed,
        artifacts: run.artifacts.iter().map(|p| Artifact::of(p)).collect::<Result<_>>()?,
        wall_time: start.elapsed().as_secs_f64(),
        tool_version: TOOL_VERSION.to_string(),
    };
    io::write_json(&run.dir.join("manifest.json"), &manifest)?;
    outcome
}

fn cmd_basis(opts: &Options, run: &mut Run) -> Result<SymmetrySector> {
    let sites = opts.sites()?;
    Options::require(&opts.m, "M")?;
    let sector = opts.sector().expect("M is set");
    let summary = build_reduced_basis(sites, sector)?.summary();
    println!("dimension {}", summary.dimension);
    io::write_json(&run.file("basis.json"), &summary)?;
    Ok(sector)
}

fn build_matrix(params: &ModelParams, sector: Option<SymmetrySector>) -> Result<SuperOperatorMatrix> {
    match sector {
        None => build_liouvillian_full(params),
        Some(s) => build_liouvillian_sector(params, &build_reduced_basis(params.sites, s)?),
    }
}

type Outcome = Result<()>;

fn cmd_spectrum(opts: &Options, run: &mut Run) -> Result<(ModelParams, Option<SymmetrySector>, Outcome)> {
    let params = opts.params()?;
    let sector = opts.sector();
    let matrix = build_matrix(&params, sector)?;
    let spectrum = spectral::eigenvalues(&matrix)?;
    io::write_spectrum_csv(&run.file("spectrum.csv"), &spectrum.eigenvalues)?;
    let report = validate_spectrum(&matrix, &spectrum, None, ValidationTolerances::default());
    #[derive(Serialize)]
    struct Summary<'a> {
        dimension: usize,
        max_real_part: f64,
        solver_residual: f64,
        eigensolver_seconds: f64,
        validation: &'a spectral::SpectrumReport,
    }
    io::write_json(
        &run.file("spectrum.json"),
        &Summary {
            dimension: spectrum.len(),
            max_real_part: report.max_real_part,
            solver_residual: spectrum.solver_residual,
            eigensolver_seconds: spectrum.seconds,
            validation: &report,
        },
    )?;
    println!("{} eigenvalues, max Re {:e}", spectrum.len(), report.max_real_part);
    Ok((params, sector, report.into_result().map(|_| ())))
}

fn cmd_matrix(opts: &Options, run: &mut Run) -> Result<(ModelParams, Option<SymmetrySector>)> {
    let params = opts.params()?;
    let sector = opts.sector();
    let matrix = build_matrix(&params, sector)?;
    io::write_matrix_csv(&run.file("matrix.csv"), &matrix)?;
    println!("dimension {}, {} nonzeros", matrix.dimension, matrix.entries.len());
    Ok((params, sector))
}

fn cmd_csr(opts: &Options, run: &mut Run) -> Result<Option<serde_json::Value>> {
    let bins = opts.bins.unwrap_or(DEFAULT_BINS);
    let (result, tag) = match (&opts.spectrum, &opts.ensemble) {
        (Some(_), Some(_)) => return Err(Error::invalid("give either --spectrum or --ensemble, not both")),
        (Some(path), None) => {
            let points: Vec<Complex64> = io::read_spectrum_csv(path)?;
            (csr::complex_spacing_ratios(&points)?, None)
        }
        (None, Some(kind)) => {
            let spec = EnsembleSpec::new(
                kind.parse::<EnsembleKind>()?,
                opts.n.unwrap_or(rmt::DESK_MATRIX_SIZE),
                opts.realizations.unwrap_or(rmt::DESK_REALIZATIONS),
                opts.seed.unwrap_or(0),
            );
            let ens = rmt::ensemble_csr(&spec)?;
            if ens.failures > 0 {
                log::warn!("{} realizations failed", ens.failures);
            }
            (ens.csr, Some(spec))
        }
        (None, None) => return Err(Error::invalid("missing --spectrum or --ensemble")),
    };
    let (theta, radius) = csr::marginals(&result.samples, result.skipped, bins)?;
    let stats = csr::summary_stats(&result.samples, result.skipped)?;
    let flatness = csr::angular_flatness_test(&theta)?;
    io::write_samples_csv(&run.file("csr_samples.csv"), &result.samples)?;
    io::write_histogram_csv(&run.file("hist_theta.csv"), &theta)?;
    io::write_histogram_csv(&run.file("hist_r.csv"), &radius)?;
    #[derive(Serialize)]
    struct Summary {
        ensemble: Option<EnsembleSpec>,
        stats: csr::SummaryStats,
        angular_flatness: csr::ChiSquareTest,
        bins: usize,
    }
    io::write_json(
        &run.file("csr_summary.json"),
        &Summary {
            ensemble: tag,
            stats,
            angular_flatness: flatness,
            bins,
        },
    )?;
    println!(
        "{} samples ({} skipped), <r> = {:.5} ± {:.5}, <cos θ> = {:.5} ± {:.5}",
        stats.count, stats.skipped, stats.mean_r, stats.mean_r_stderr, stats.mean_cos_theta, stats.mean_cos_theta_stderr
    );
    Ok(tag.map(serde_json::to_value).transpose()?)
}

fn cmd_surmise(opts: &Options, run: &mut Run) -> Result<serde_json::Value> {
    let n = Options::require(&opts.n, "N")?;
    let bins = opts.bins.unwrap_or(12);
    let mc = opts.mc_samples.unwrap_or(200_000);
    let seed = opts.seed.unwrap_or(0);
    let m = rmt::tue_surmise_marginals(n, bins, mc, seed, &SurmiseGrid::default(), &SurmiseOptions::default())?;
    io::write_marginal_csv(&run.file("surmise_theta.csv"), &m.theta)?;
    io::write_marginal_csv(&run.file("surmise_r.csv"), &m.radius)?;
    println!("surmise N={n}: {bins} bins from {mc} samples");
    Ok(serde_json::json!({ "N": n, "bins": bins, "mc_samples": mc, "options": m.options }))
}

fn cmd_stripes(opts: &Options, run: &mut Run) -> Result<(ModelParams, Option<SymmetrySector>)> {
    let params = opts.params()?;
    let m = Options::require(&opts.m, "M")?;
    let prediction = stripe_prediction(params.sites, m, params.gamma_p, params.gamma_l)?;
    // without k the spectrum is the union over every momentum block
    let sectors = match opts.k {
        Some(_) => vec![opts.sector().expect("M is set")],
        None => SymmetrySector::momentum_blocks(params.sites, m),
    };
    let mut eigenvalues = Vec::new();
    for s in &sectors {
        let matrix = build_liouvillian_sector(&params, &build_reduced_basis(params.sites, *s)?)?;
        eigenvalues.extend(spectral::eigenvalues(&matrix)?.eigenvalues);
    }
    spectral::canonical_sort(&mut eigenvalues);
    let report = cluster_match(&eigenvalues, &prediction, opts.tolerance.unwrap_or(1e-8))?;
    io::write_json(&run.file("stripes.json"), &report)?;
    match report.max_deviation {
        Some(d) => println!("{} stripes, delta {:e}, max deviation {d:e}", prediction.count, prediction.delta),
        None => println!("{} stripes predicted; clustering inconclusive", prediction.count),
    }
    Ok((params, sectors.first().copied().filter(|_| sectors.len() == 1)))
}

/// Applies the thread count from the environment and the log level.
pub fn init(cli: &Cli) -> Result<()> {
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
