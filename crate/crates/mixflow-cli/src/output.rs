//! Field snapshots, per-step diagnostics and the run manifest.
//!
//! CSV numbers are printed with 17 significant digits so a write/read cycle
//! is lossless for `f64`; JSON snapshots rely on serde_json's shortest
//! round-trip float encoding. The manifest hash covers the scenario file
//! bytes; wall-clock metadata lives in its own field so everything else is
//! reproducible byte for byte.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format '{other}' (use csv or json)")),
        }
    }
}

/// Lossless float formatting for CSV (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One field snapshot: grid positions, species densities, velocity, entropic
/// variables and pressure.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub p: Vec<f64>,
}

impl Snapshot {
    fn csv_bytes(&self) -> Vec<u8> {
        let n = self.rho.len();
        let n_h = self.h.len();
        let mut out = String::new();
        out.push('x');
        for k in 0..n {
            out.push_str(&format!(",rho_{}", k + 1));
        }
        out.push_str(",u");
        for k in 0..n_h {
            out.push_str(&format!(",h_{}", k + 1));
        }
        out.push_str(",p\n");
        for i in 0..self.x.len() {
            out.push_str(&fmt_f64(self.x[i]));
            for k in 0..n {
                out.push(',');
                out.push_str(&fmt_f64(self.rho[k][i]));
            }
            out.push(',');
            out.push_str(&fmt_f64(self.u[i]));
            for k in 0..n_h {
                out.push(',');
                out.push_str(&fmt_f64(self.h[k][i]));
            }
            out.push(',');
            out.push_str(&fmt_f64(self.p[i]));
            out.push('\n');
        }
        out.into_bytes()
    }
}

/// Write a snapshot file, returning its (relative) file name.
pub fn write_snapshot(
    dir: &Path,
    index: usize,
    snap: &Snapshot,
    format: OutputFormat,
) -> std::io::Result<String> {
    let name = match format {
        OutputFormat::Csv => format!("fields_{index:06}.csv"),
        OutputFormat::Json => format!("fields_{index:06}.json"),
    };
    let bytes = match format {
        OutputFormat::Csv => snap.csv_bytes(),
        OutputFormat::Json => serde_json::to_vec_pretty(snap).expect("snapshot serializes"),
    };
    std::fs::write(dir.join(&name), bytes)?;
    Ok(name)
}

pub fn read_snapshot_json(path: &Path) -> std::io::Result<Snapshot> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// A generic per-row CSV writer with a fixed header.
pub struct CsvWriter {
    file: std::fs::File,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> std::io::Result<Self> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{}", header.join(","))?;
        Ok(Self { file })
    }

    pub fn row(&mut self, cells: &[String]) -> std::io::Result<()> {
        writeln!(self.file, "{}", cells.join(","))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<String>,
    pub config_sha256: String,
    pub diagnostics: serde_json::Value,
    /// Wall-clock stamp; the only non-reproducible field.
    pub created_unix: u64,
}

pub fn config_hash(config_bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_manifest(
    dir: &Path,
    files: Vec<String>,
    config_bytes: &[u8],
    diagnostics: serde_json::Value,
) -> std::io::Result<PathBuf> {
    let manifest = Manifest {
        files,
        config_sha256: config_hash(config_bytes),
        diagnostics,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_snapshot() -> Snapshot {
        Snapshot {
            t: 0.125,
            x: vec![0.0, 0.5, 1.0],
            rho: vec![vec![1.0, 1.1, 1.2], vec![0.3, std::f64::consts::PI, 0.5]],
            u: vec![0.0, 1e-17, -3.25],
            h: vec![vec![0.1, -0.2, 0.3]],
            p: vec![1.3, 1.4, 1.5],
        }
    }

    #[test]
    fn json_snapshot_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let snap = sample_snapshot();
        let name = write_snapshot(dir.path(), 7, &snap, OutputFormat::Json).unwrap();
        let back = read_snapshot_json(&dir.path().join(name)).unwrap();
        assert_eq!(snap, back);
    }

    #[test]
    fn csv_keeps_17_significant_digits() {
        let dir = tempfile::tempdir().unwrap();
        let snap = sample_snapshot();
        let name = write_snapshot(dir.path(), 0, &snap, OutputFormat::Csv).unwrap();
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x,rho_1,rho_2,u,h_1,p");
        let second_row: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
        let pi_back: f64 = second_row[2].parse().unwrap();
        assert_eq!(pi_back, std::f64::consts::PI, "lossless round trip");
    }

    #[test]
    fn manifest_hash_tracks_config_content() {
        let a = config_hash(b"[params]\nm = [1.0, 1.0]\n");
        let b = config_hash(b"[params]\nm = [1.0, 2.0]\n");
        assert_ne!(a, b);
        assert_eq!(a, config_hash(b"[params]\nm = [1.0, 1.0]\n"));
    }
}
