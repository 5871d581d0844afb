//! Bundle directory format: `manifest.json` (sizes plus per-sample label
//! arrays) and `features.bin`, `n x (d_o + d_ir + d_re)` little-endian f32,
//! row-major, each row holding `f_o`, `f_ir`, `f_re` in that order.
//!
//! Small hand-written fixtures can also be loaded from CSV.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundle::{
    EmbeddingBundle, FeatureKind, FeatureMatrix, ReliabilityScore, Role, SampleMeta,
};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const FORMAT_VERSION: u32 = 1;
pub const CSV_MAX_ROWS: usize = 1000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub n: usize,
    pub d_o: usize,
    pub d_ir: usize,
    pub d_re: usize,
    pub identity: Vec<i32>,
    pub clothes: Vec<i32>,
    pub camera: Vec<i32>,
    pub role: Vec<Role>,
    pub reliability: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

pub fn save_bundle(bundle: &EmbeddingBundle, dir: impl AsRef<Path>) -> Result<()> {
    save_bundle_with_config(bundle, dir, None)
}

/// Writes the bundle directory, embedding `config` verbatim in the manifest.
pub fn save_bundle_with_config(
    bundle: &EmbeddingBundle,
    dir: impl AsRef<Path>,
    config: Option<serde_json::Value>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (d_o, d_ir, d_re) = bundle.dims();
    let metas = bundle.metas();
    let manifest = BundleManifest {
        version: FORMAT_VERSION,
        n: bundle.len(),
        d_o,
        d_ir,
        d_re,
        identity: metas.iter().map(|m| m.identity).collect(),
        clothes: metas.iter().map(|m| m.clothes).collect(),
        camera: metas.iter().map(|m| m.camera).collect(),
        role: metas.iter().map(|m| m.role).collect(),
        reliability: bundle.reliability().iter().map(|r| r.0).collect(),
        config,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    let mut payload = Vec::with_capacity(bundle.len() * (d_o + d_ir + d_re) * 4);
    for i in 0..bundle.len() {
        let t = bundle.features(i);
        for v in [t.f_o, t.f_ir, t.f_re] {
            for x in v {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let path = dir.join(FEATURES_FILE);
    fs::write(&path, payload).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<BundleManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json { path, source: e })
}

/// Loads a bundle directory, or a CSV file when `path` ends in `.csv`.
pub fn load_bundle(path: impl AsRef<Path>) -> Result<EmbeddingBundle> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "csv") {
        return load_bundle_csv(path);
    }
    let manifest = read_manifest(path)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 0,
            field: "version".into(),
            reason: format!("unsupported version {}", manifest.version),
        });
    }
    let n = manifest.n;
    for (field, len) in [
        ("identity", manifest.identity.len()),
        ("clothes", manifest.clothes.len()),
        ("camera", manifest.camera.len()),
        ("role", manifest.role.len()),
        ("reliability", manifest.reliability.len()),
    ] {
        if len != n {
            return Err(Error::DimMismatch {
                context: format!("manifest {field}"),
                expected: n,
                found: len,
            });
        }
    }

    let feat_path: PathBuf = path.join(FEATURES_FILE);
    let payload = fs::read(&feat_path).map_err(|e| Error::io(&feat_path, e))?;
    let (d_o, d_ir, d_re) = (manifest.d_o, manifest.d_ir, manifest.d_re);
    let row_len = d_o + d_ir + d_re;
    let row_bytes = row_len * 4;
    if row_bytes == 0 {
        return Err(Error::Format {
            offset: 0,
            field: "d_o/d_ir/d_re".into(),
            reason: "zero feature width".into(),
        });
    }
    let expected_bytes = n * row_bytes;
    if payload.len() != expected_bytes {
        if payload.len() % row_bytes == 0 {
            return Err(Error::DimMismatch {
                context: "features.bin rows".into(),
                expected: n,
                found: payload.len() / row_bytes,
            });
        }
        let offset = payload.len();
        let row = offset / row_bytes;
        let col = (offset % row_bytes) / 4;
        let kind = if col < d_o {
            FeatureKind::Original
        } else if col < d_o + d_ir {
            FeatureKind::ClothesIrrelevant
        } else {
            FeatureKind::ClothesRelevant
        };
        return Err(Error::Format {
            offset: offset as u64,
            field: format!("features.bin row {row} {kind}"),
            reason: format!("payload truncated, expected {expected_bytes} bytes"),
        });
    }

    let mut o = Vec::with_capacity(n * d_o);
    let mut ir = Vec::with_capacity(n * d_ir);
    let mut re = Vec::with_capacity(n * d_re);
    for (j, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        let col = j % row_len;
        if col < d_o {
            o.push(v);
        } else if col < d_o + d_ir {
            ir.push(v);
        } else {
            re.push(v);
        }
    }

    let metas = (0..n)
        .map(|i| SampleMeta {
            sample_id: i,
            identity: manifest.identity[i],
            clothes: manifest.clothes[i],
            camera: manifest.camera[i],
            role: manifest.role[i],
        })
        .collect();
    EmbeddingBundle::new(
        metas,
        FeatureMatrix::new(d_o, o)?,
        FeatureMatrix::new(d_ir, ir)?,
        FeatureMatrix::new(d_re, re)?,
        manifest
            .reliability
            .iter()
            .map(|&r| ReliabilityScore(r))
            .collect(),
    )
}

/// CSV columns: `identity,clothes,camera,role,reliability` followed by
/// `o_0..`, `ir_0..`, `re_0..` feature columns in any order.
pub fn load_bundle_csv(path: impl AsRef<Path>) -> Result<EmbeddingBundle> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();

    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format {
                offset: 0,
                field: name.to_string(),
                reason: "missing CSV column".into(),
            })
    };
    let c_id = find("identity")?;
    let c_clo = find("clothes")?;
    let c_cam = find("camera")?;
    let c_role = find("role")?;
    let c_rel = find("reliability")?;

    let feature_cols = |prefix: &str| -> Vec<usize> {
        let mut cols: Vec<(usize, usize)> = headers
            .iter()
            .enumerate()
            .filter_map(|(c, h)| {
                h.trim()
                    .strip_prefix(prefix)
                    .and_then(|rest| rest.parse::<usize>().ok())
                    .map(|k| (k, c))
            })
            .collect();
        cols.sort_unstable();
        cols.into_iter().map(|(_, c)| c).collect()
    };
    let cols_o = feature_cols("o_");
    let cols_ir = feature_cols("ir_");
    let cols_re = feature_cols("re_");

    let mut metas = Vec::new();
    let mut rel = Vec::new();
    let (mut o, mut ir, mut re) = (Vec::new(), Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if i >= CSV_MAX_ROWS {
            return Err(Error::Format {
                offset: record.position().map(|p| p.byte()).unwrap_or(0),
                field: "rows".into(),
                reason: format!("CSV bundles are limited to {CSV_MAX_ROWS} samples"),
            });
        }
        let offset = record.position().map(|p| p.byte()).unwrap_or(0);
        let field = |c: usize| record.get(c).unwrap_or("").trim();
        let int = |c: usize| -> Result<i32> {
            field(c).parse().map_err(|_| Error::Format {
                offset,
                field: headers[c].to_string(),
                reason: format!("not an integer: {:?}", field(c)),
            })
        };
        let float = |c: usize| -> Result<f32> {
            field(c).parse().map_err(|_| Error::Format {
                offset,
                field: headers[c].to_string(),
                reason: format!("not a number: {:?}", field(c)),
            })
        };
        let role = Role::from_code(field(c_role)).ok_or_else(|| Error::Format {
            offset,
            field: "role".into(),
            reason: format!("expected q or g, found {:?}", field(c_role)),
        })?;
        metas.push(SampleMeta {
            sample_id: i,
            identity: int(c_id)?,
            clothes: int(c_clo)?,
            camera: int(c_cam)?,
            role,
        });
        rel.push(ReliabilityScore(float(c_rel)?));
        for (cols, dst) in [(&cols_o, &mut o), (&cols_ir, &mut ir), (&cols_re, &mut re)] {
            for &c in cols.iter() {
                dst.push(float(c)?);
            }
        }
    }
    EmbeddingBundle::new(
        metas,
        FeatureMatrix::new(cols_o.len(), o)?,
        FeatureMatrix::new(cols_ir.len(), ir)?,
        FeatureMatrix::new(cols_re.len(), re)?,
        rel,
    )
}

pub fn save_bundle_csv(bundle: &EmbeddingBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (d_o, d_ir, d_re) = bundle.dims();
    let mut out = String::from("identity,clothes,camera,role,reliability");
    for (prefix, d) in [("o_", d_o), ("ir_", d_ir), ("re_", d_re)] {
        for k in 0..d {
            out.push_str(&format!(",{prefix}{k}"));
        }
    }
    out.push('\n');
    for (i, m) in bundle.metas().iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}",
            m.identity,
            m.clothes,
            m.camera,
            m.role.code(),
            bundle.reliability()[i].0
        ));
        let t = bundle.features(i);
        for v in [t.f_o, t.f_ir, t.f_re] {
            for x in v {
                out.push_str(&format!(",{x}"));
            }
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
