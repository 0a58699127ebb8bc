//! On-disk artifacts: loading CSVs, support and diagnostics JSON, manifests.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! matrix read back is bitwise equal to the one written. Files are UTF-8
//! with LF line endings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::admm::SolverReport;
use crate::error::{Error, Result};
use crate::estimator::LoadingEstimate;

pub const LOADINGS_FILE: &str = "loadings.csv";
pub const SUPPORTS_FILE: &str = "supports.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Enough to re-run the command that produced a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Hex SHA-256 of the canonical JSON of `config`.
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(
        command: &str,
        config: &impl Serialize,
        seed: u64,
        files: Vec<String>,
    ) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_sha256: config_hash(&config)?,
            config,
            files,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        write_text(
            &dir.join(MANIFEST_FILE),
            &(serde_json::to_string_pretty(self)? + "\n"),
        )
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Object keys are sorted by `serde_json::Value`, so equal configs hash
/// equally regardless of field order in the source.
pub fn config_hash(config: &serde_json::Value) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub(crate) fn write_text(path: &Path, body: &str) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Headed CSV with one row per matrix row.
pub fn matrix_to_csv(m: &DMatrix<f64>, header: &[String]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{}", m[(i, j)]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, header: &[String]) -> Result<PathBuf> {
    if header.len() != m.ncols() {
        return Err(Error::InvalidArgument(format!(
            "{} header names for {} columns",
            header.len(),
            m.ncols()
        )));
    }
    write_text(path, &matrix_to_csv(m, header))
}

/// Reads a headed numeric CSV written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<(DMatrix<f64>, Vec<String>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Format(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                i + 1,
                rec.len(),
                header.len()
            )));
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: i + 1,
                col: j + 1,
                msg: format!("`{cell}` is not a number"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok((DMatrix::from_row_slice(rows, header.len(), &data), header))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSupport {
    /// 1-based series indices with a nonzero loading.
    pub support: Vec<usize>,
    /// 1-based block indices with at least one nonzero loading.
    pub group_support: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub lambda1: f64,
    pub lambda2: f64,
    pub converged: bool,
    pub degenerate: bool,
    pub nnz: usize,
    pub reports: Vec<SolverReport>,
}

/// A loading estimate read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedEstimate {
    pub q_hat: DMatrix<f64>,
    pub supports: Vec<Vec<usize>>,
    pub group_supports: Vec<Vec<usize>>,
    pub diagnostics: Diagnostics,
    pub manifest: Manifest,
}

fn loading_header(r: usize) -> Vec<String> {
    (1..=r).map(|i| format!("q{i}")).collect()
}

/// Writes the estimate and a manifest for `config` into `dir`.
pub fn save_estimate(
    est: &LoadingEstimate,
    dir: &Path,
    command: &str,
    config: &impl Serialize,
    seed: u64,
) -> Result<Manifest> {
    if est.r() == 0 {
        return Err(Error::InvalidArgument(
            "cannot save an estimate with r = 0".into(),
        ));
    }
    write_matrix_csv(
        &dir.join(LOADINGS_FILE),
        &est.q_hat,
        &loading_header(est.r()),
    )?;
    let supports: Vec<ColumnSupport> = est
        .supports
        .iter()
        .zip(&est.group_supports)
        .map(|(s, g)| ColumnSupport {
            support: s.iter().map(|j| j + 1).collect(),
            group_support: g.iter().map(|j| j + 1).collect(),
        })
        .collect();
    write_text(
        &dir.join(SUPPORTS_FILE),
        &(serde_json::to_string_pretty(&supports)? + "\n"),
    )?;
    let diagnostics = Diagnostics {
        lambda1: est.lambdas.0,
        lambda2: est.lambdas.1,
        converged: est.converged(),
        degenerate: est.degenerate(),
        nnz: est.nnz(),
        reports: est.reports.clone(),
    };
    write_text(
        &dir.join(DIAGNOSTICS_FILE),
        &(serde_json::to_string_pretty(&diagnostics)? + "\n"),
    )?;
    let files = [LOADINGS_FILE, SUPPORTS_FILE, DIAGNOSTICS_FILE]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let manifest = Manifest::new(command, config, seed, files)?;
    manifest.write(dir)?;
    Ok(manifest)
}

pub fn load_estimate(dir: &Path) -> Result<SavedEstimate> {
    let (q_hat, header) = read_matrix_csv(&dir.join(LOADINGS_FILE))?;
    if header != loading_header(header.len()) || header.is_empty() {
        return Err(Error::Format(format!(
            "unexpected loadings header {header:?}"
        )));
    }
    let read = |name: &str| -> Result<String> {
        let path = dir.join(name);
        std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    };
    let cols: Vec<ColumnSupport> = serde_json::from_str(&read(SUPPORTS_FILE)?)?;
    if cols.len() != q_hat.ncols() {
        return Err(Error::Format(format!(
            "{} support entries for {} loading columns",
            cols.len(),
            q_hat.ncols()
        )));
    }
    let back = |v: &[usize]| -> Result<Vec<usize>> {
        v.iter()
            .map(|&j| {
                j.checked_sub(1)
                    .ok_or_else(|| Error::Format("support indices are 1-based".into()))
            })
            .collect()
    };
    let supports = cols
        .iter()
        .map(|c| back(&c.support))
        .collect::<Result<_>>()?;
    let group_supports = cols
        .iter()
        .map(|c| back(&c.group_support))
        .collect::<Result<_>>()?;
    Ok(SavedEstimate {
        q_hat,
        supports,
        group_supports,
        diagnostics: serde_json::from_str(&read(DIAGNOSTICS_FILE)?)?,
        manifest: Manifest::read(dir)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::AdmmOptions;
    use crate::estimator::{estimate_loadings, EstimateOptions};
    use crate::penalty::PenaltyConfig;
    use crate::simulation::{replication_data, SimulationConfig};
    use crate::spectral::SpectralBasis;
    use proptest::prelude::*;

    fn small_estimate() -> LoadingEstimate {
        let cfg = SimulationConfig {
            n: 200,
            reps: 1,
            ..Default::default()
        };
        let (truth, panel) = replication_data(&cfg, 0).unwrap();
        let basis = SpectralBasis::from_panel(&panel, 1, 3).unwrap();
        let pen = PenaltyConfig::default().with_lambdas(0.05, 0.02);
        let opts = EstimateOptions {
            admm: AdmmOptions::default(),
            ..Default::default()
        };
        estimate_loadings(&basis, &truth.groups, &pen, &opts).unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let est = small_estimate();
        let cfg = serde_json::json!({"r": 3, "lambda1": 0.05});
        let m = save_estimate(&est, dir.path(), "estimate", &cfg, 11).unwrap();
        let back = load_estimate(dir.path()).unwrap();
        assert_eq!(back.q_hat, est.q_hat);
        assert_eq!(back.supports, est.supports);
        assert_eq!(back.group_supports, est.group_supports);
        assert_eq!(back.diagnostics.reports, est.reports);
        assert_eq!(back.manifest, m);
        assert_eq!(m.seed, 11);
        assert_eq!(m.version, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn empty_estimate_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let est = LoadingEstimate {
            q_hat: DMatrix::zeros(4, 0),
            s_tilde: DMatrix::zeros(4, 0),
            supports: vec![],
            group_supports: vec![],
            lambdas: (0.0, 0.0),
            reports: vec![],
        };
        let err = save_estimate(&est, dir.path(), "estimate", &(), 0).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(!dir.path().join(LOADINGS_FILE).exists());
    }

    #[test]
    fn hash_tracks_every_field() {
        let base = serde_json::json!({"h0": 1, "r": 3, "seed": 5, "grid": [0.1, 0.2]});
        let h = config_hash(&base).unwrap();
        for (k, v) in [
            ("h0", serde_json::json!(2)),
            ("r", serde_json::json!(4)),
            ("seed", serde_json::json!(6)),
            ("grid", serde_json::json!([0.1, 0.3])),
        ] {
            let mut c = base.clone();
            c[k] = v;
            assert_ne!(config_hash(&c).unwrap(), h, "{k}");
        }
        let reordered = serde_json::json!({"grid": [0.1, 0.2], "seed": 5, "r": 3, "h0": 1});
        assert_eq!(config_hash(&reordered).unwrap(), h);
    }

    #[test]
    fn unwritable_target_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = write_text(&blocker.join("sub").join("a.csv"), "1").unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }

    #[test]
    fn header_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(write_matrix_csv(&path, &m, &["a".into()]).is_err());
        assert!(!path.exists());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bitwise(
            vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, 6)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let m = DMatrix::from_row_slice(3, 2, &vals);
            let path = dir.path().join("m.csv");
            write_matrix_csv(&path, &m, &["a".into(), "b".into()]).unwrap();
            let (back, h) = read_matrix_csv(&path).unwrap();
            prop_assert_eq!(h, vec!["a".to_string(), "b".to_string()]);
            for (x, y) in m.iter().zip(back.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
