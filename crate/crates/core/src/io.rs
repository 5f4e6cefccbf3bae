//! CSV payloads, JSON metadata and run manifests.
//!
//! Floats are written in shortest round-trip scientific notation, so reading
//! a file back yields the exact values that were written.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::csr::{MarginalHistogram, RatioSample};
use crate::error::{Error, Result};
use crate::liouvillian::SuperOperatorMatrix;
use crate::rmt::BinnedMarginal;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn f(x: f64) -> String {
    format!("{x:e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_spectrum_csv(path: &Path, eigenvalues: &[Complex64]) -> Result<()> {
    write_rows(path, &["re", "im"], eigenvalues.iter().map(|z| vec![f(z.re), f(z.im)]))
}

/// Reads the `re` and `im` columns of a spectrum file.
pub fn read_spectrum_csv(path: &Path) -> Result<Vec<Complex64>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::invalid(format!("{}: missing column '{name}'", path.display())))
    };
    let (ire, iim) = (col("re")?, col("im")?);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::invalid(format!("{}: bad number on row {}", path.display(), line + 2)))
        };
        out.push(Complex64::new(parse(ire)?, parse(iim)?));
    }
    Ok(out)
}

pub fn write_samples_csv(path: &Path, samples: &[RatioSample]) -> Result<()> {
    write_rows(
        path,
        &["re", "im", "r", "theta"],
        samples.iter().map(|s| vec![f(s.z.re), f(s.z.im), f(s.r), f(s.theta)]),
    )
}

pub fn write_histogram_csv(path: &Path, h: &MarginalHistogram) -> Result<()> {
    let se = h.standard_errors();
    write_rows(
        path,
        &["bin_lo", "bin_hi", "density", "stderr", "count"],
        (0..h.bins()).map(|i| {
            vec![
                f(h.bin_edges[i]),
                f(h.bin_edges[i + 1]),
                f(h.densities[i]),
                f(se[i]),
                h.counts[i].to_string(),
            ]
        }),
    )
}

pub fn write_marginal_csv(path: &Path, m: &BinnedMarginal) -> Result<()> {
    write_rows(
        path,
        &["bin_lo", "bin_hi", "density", "stderr"],
        (0..m.bins()).map(|i| vec![f(m.bin_edges[i]), f(m.bin_edges[i + 1]), f(m.density[i]), f(m.stderr[i])]),
    )
}

/// Nonzero entries as `(row, col, re, im)` triplets.
pub fn write_matrix_csv(path: &Path, m: &SuperOperatorMatrix) -> Result<()> {
    write_rows(
        path,
        &["row", "col", "re", "im"],
        m.entries
            .iter()
            .map(|&(r, c, v)| vec![r.to_string(), c.to_string(), f(v.re), f(v.im)]),
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut file = File::open(path)?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Artifact {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
            bytes: std::fs::metadata(path)?.len(),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub params: serde_json::Value,
    pub sector: Option<crate::basis::SymmetrySector>,
    pub seed: Option<u64>,
    pub artifacts: Vec<Artifact>,
    pub wall_time: f64,
    pub tool_version: String,
}

impl RunManifest {
    /// Checks every listed file against its recorded checksum.
    pub fn verify(&self) -> Result<()> {
        for a in &self.artifacts {
            let now = sha256_file(&a.path)?;
            if now != a.sha256 {
                return Err(Error::Validation(format!("checksum mismatch for {}", a.path.display())));
            }
        }
        Ok(())
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}
