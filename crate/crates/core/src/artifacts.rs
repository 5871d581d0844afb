//! Named matrix artifacts: one little-endian f32 file per matrix plus an
//! `artifacts.json` manifest carrying shapes, axis sample ids and the config
//! echo. Optional CSV copies are written next to the binaries.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};

pub const ARTIFACT_MANIFEST: &str = "artifacts.json";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub row_ids: Vec<usize>,
    pub col_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub version: u32,
    pub matrices: Vec<MatrixEntry>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ArtifactManifest {
    pub fn entry(&self, name: &str) -> Option<&MatrixEntry> {
        self.matrices.iter().find(|m| m.name == name)
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes every matrix as `<name>.f32` (and `<name>.csv` when `csv`).
pub fn save_matrices(
    dir: impl AsRef<Path>,
    matrices: &[(&str, &DistanceMatrix)],
    config: serde_json::Value,
    csv: bool,
) -> Result<ArtifactManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for &(name, m) in matrices {
        let file = format!("{name}.f32");
        let mut bytes = Vec::with_capacity(m.values().len() * 4);
        for &v in m.values() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        write(&dir.join(&file), bytes)?;
        if csv {
            write_csv(&dir.join(format!("{name}.csv")), m)?;
        }
        entries.push(MatrixEntry {
            name: name.to_string(),
            file,
            rows: m.rows(),
            cols: m.cols(),
            row_ids: m.row_ids().to_vec(),
            col_ids: m.col_ids().to_vec(),
        });
    }
    let manifest = ArtifactManifest {
        version: ARTIFACT_VERSION,
        matrices: entries,
        config,
    };
    let path = dir.join(ARTIFACT_MANIFEST);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    write(&path, json)?;
    Ok(manifest)
}

/// Header `id,<gallery ids>`, then one row per query id.
fn write_csv(path: &Path, m: &DistanceMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(m.col_ids().iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for r in 0..m.rows() {
        let mut rec = vec![m.row_ids()[r].to_string()];
        rec.extend(m.row(r).iter().map(|&v| (v as f32).to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_artifact_manifest(dir: impl AsRef<Path>) -> Result<ArtifactManifest> {
    let path = dir.as_ref().join(ARTIFACT_MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json { path, source: e })
}

/// Loads the matrix called `name` from an artifact directory.
pub fn load_matrix(dir: impl AsRef<Path>, name: &str) -> Result<DistanceMatrix> {
    let dir = dir.as_ref();
    let manifest = read_artifact_manifest(dir)?;
    let entry = manifest.entry(name).ok_or_else(|| Error::Format {
        offset: 0,
        field: ARTIFACT_MANIFEST.into(),
        reason: format!("no matrix named {name:?}"),
    })?;
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = entry.rows * entry.cols * 4;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected) as u64,
            field: entry.file.clone(),
            reason: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    DistanceMatrix::new(entry.row_ids.clone(), entry.col_ids.clone(), values)
}
