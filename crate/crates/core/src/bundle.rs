//! Embedding bundles: per-sample metadata plus the three aligned feature
//! matrices (original, clothes-irrelevant, clothes-relevant) and the
//! per-sample reliability of the clothes-irrelevant identity cues.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|norm - 1|` below which a vector counts as unit length.
pub const UNIT_NORM_TOL: f64 = 1e-6;
/// Norms below this cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "q")]
    Query,
    #[serde(rename = "g")]
    Gallery,
}

impl Role {
    pub fn code(self) -> &'static str {
        match self {
            Role::Query => "q",
            Role::Gallery => "g",
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        match s {
            "q" => Some(Role::Query),
            "g" => Some(Role::Gallery),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleMeta {
    pub sample_id: usize,
    pub identity: i32,
    /// Globally unique per (identity, outfit).
    pub clothes: i32,
    pub camera: i32,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    Original,
    ClothesIrrelevant,
    ClothesRelevant,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [
        FeatureKind::Original,
        FeatureKind::ClothesIrrelevant,
        FeatureKind::ClothesRelevant,
    ];
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Original => "f_o",
            FeatureKind::ClothesIrrelevant => "f_ir",
            FeatureKind::ClothesRelevant => "f_re",
        })
    }
}

/// Row-major `rows x dim` matrix of f32 features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimMismatch {
                context: "feature dimension".into(),
                expected: 1,
                found: 0,
            });
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimMismatch {
                context: "feature payload length".into(),
                expected: (data.len() / dim + 1) * dim,
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    context: "feature row".into(),
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copies the selected rows, in order, into a new matrix.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    /// Widens the selected rows to f64 in one contiguous buffer.
    pub fn to_f64_rows(&self, rows: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            out.extend(self.row(r).iter().map(|&v| f64::from(v)));
        }
        out
    }
}

/// Borrowed view of one sample's three features.
#[derive(Debug, Clone, Copy)]
pub struct FeatureTriple<'a> {
    pub f_o: &'a [f32],
    pub f_ir: &'a [f32],
    pub f_re: &'a [f32],
}

/// Reliability of a sample's clothes-irrelevant identity cues, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ReliabilityScore(pub f32);

impl ReliabilityScore {
    pub fn value(self) -> f64 {
        f64::from(self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    metas: Vec<SampleMeta>,
    f_o: FeatureMatrix,
    f_ir: FeatureMatrix,
    f_re: FeatureMatrix,
    reliability: Vec<ReliabilityScore>,
}

impl EmbeddingBundle {
    /// Assembles a bundle; only checks that every per-sample list has the same
    /// length. Semantic checks live in [`validate_bundle`].
    pub fn new(
        metas: Vec<SampleMeta>,
        f_o: FeatureMatrix,
        f_ir: FeatureMatrix,
        f_re: FeatureMatrix,
        reliability: Vec<ReliabilityScore>,
    ) -> Result<Self> {
        let n = metas.len();
        for (name, len) in [
            ("f_o rows", f_o.rows()),
            ("f_ir rows", f_ir.rows()),
            ("f_re rows", f_re.rows()),
            ("reliability", reliability.len()),
        ] {
            if len != n {
                return Err(Error::DimMismatch {
                    context: name.into(),
                    expected: n,
                    found: len,
                });
            }
        }
        Ok(Self {
            metas,
            f_o,
            f_ir,
            f_re,
            reliability,
        })
    }

    pub fn len(&self) -> usize {
        self.metas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metas.is_empty()
    }

    /// `(d_o, d_ir, d_re)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.f_o.dim(), self.f_ir.dim(), self.f_re.dim())
    }

    pub fn metas(&self) -> &[SampleMeta] {
        &self.metas
    }

    pub fn meta(&self, i: usize) -> &SampleMeta {
        &self.metas[i]
    }

    pub fn features(&self, i: usize) -> FeatureTriple<'_> {
        FeatureTriple {
            f_o: self.f_o.row(i),
            f_ir: self.f_ir.row(i),
            f_re: self.f_re.row(i),
        }
    }

    pub fn matrix(&self, kind: FeatureKind) -> &FeatureMatrix {
        match kind {
            FeatureKind::Original => &self.f_o,
            FeatureKind::ClothesIrrelevant => &self.f_ir,
            FeatureKind::ClothesRelevant => &self.f_re,
        }
    }

    pub fn matrix_mut(&mut self, kind: FeatureKind) -> &mut FeatureMatrix {
        match kind {
            FeatureKind::Original => &mut self.f_o,
            FeatureKind::ClothesIrrelevant => &mut self.f_ir,
            FeatureKind::ClothesRelevant => &mut self.f_re,
        }
    }

    pub fn reliability(&self) -> &[ReliabilityScore] {
        &self.reliability
    }

    pub fn reliability_mut(&mut self) -> &mut [ReliabilityScore] {
        &mut self.reliability
    }

    pub fn metas_mut(&mut self) -> &mut [SampleMeta] {
        &mut self.metas
    }

    pub fn query_indices(&self) -> Vec<usize> {
        self.indices_with_role(Role::Query)
    }

    pub fn gallery_indices(&self) -> Vec<usize> {
        self.indices_with_role(Role::Gallery)
    }

    fn indices_with_role(&self, role: Role) -> Vec<usize> {
        self.metas
            .iter()
            .enumerate()
            .filter(|(_, m)| m.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Keeps the listed samples (in the given order) and renumbers sample ids
    /// densely from zero.
    pub fn subset(&self, keep: &[usize]) -> Self {
        let metas = keep
            .iter()
            .enumerate()
            .map(|(new_id, &old)| SampleMeta {
                sample_id: new_id,
                ..self.metas[old]
            })
            .collect();
        Self {
            metas,
            f_o: self.f_o.select(keep),
            f_ir: self.f_ir.select(keep),
            f_re: self.f_re.select(keep),
            reliability: keep.iter().map(|&i| self.reliability[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    Empty,
    NonDenseId,
    NegativeLabel,
    SharedClothesLabel,
    NonFinite,
    NotUnitNorm,
    ReliabilityRange,
    MissingRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub sample: Option<usize>,
    pub kind: ViolationKind,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sample {
            Some(i) => write!(f, "sample {i}: {}", self.reason),
            None => f.write_str(&self.reason),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidBundle(self.violations))
        }
    }
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Lists every invariant violation. Never mutates the bundle.
pub fn validate_bundle(bundle: &EmbeddingBundle) -> ValidationReport {
    let mut out = Vec::new();
    let mut push = |sample: Option<usize>, kind: ViolationKind, reason: String| {
        out.push(Violation {
            sample,
            kind,
            reason,
        })
    };

    if bundle.is_empty() {
        push(None, ViolationKind::Empty, "bundle has no samples".into());
        return ValidationReport { violations: out };
    }

    let mut clothes_owner: BTreeMap<i32, (i32, usize)> = BTreeMap::new();
    let mut reported_clothes = std::collections::BTreeSet::new();
    for (i, m) in bundle.metas().iter().enumerate() {
        if m.sample_id != i {
            push(
                Some(i),
                ViolationKind::NonDenseId,
                format!("sample_id {} at position {i}", m.sample_id),
            );
        }
        if m.identity < 0 || m.clothes < 0 || m.camera < 0 {
            push(
                Some(i),
                ViolationKind::NegativeLabel,
                "negative identity, clothes or camera label".into(),
            );
        }
        match clothes_owner.get(&m.clothes) {
            Some(&(id, _)) if id != m.identity => {
                if reported_clothes.insert(m.clothes) {
                    push(
                        Some(i),
                        ViolationKind::SharedClothesLabel,
                        format!(
                            "clothes_label {} shared across identities {} and {}",
                            m.clothes, id, m.identity
                        ),
                    );
                }
            }
            Some(_) => {}
            None => {
                clothes_owner.insert(m.clothes, (m.identity, i));
            }
        }
    }

    for i in 0..bundle.len() {
        let triple = bundle.features(i);
        for (kind, v) in [
            (FeatureKind::Original, triple.f_o),
            (FeatureKind::ClothesIrrelevant, triple.f_ir),
            (FeatureKind::ClothesRelevant, triple.f_re),
        ] {
            if v.iter().any(|x| !x.is_finite()) {
                push(
                    Some(i),
                    ViolationKind::NonFinite,
                    format!("non-finite value in {kind}"),
                );
                continue;
            }
            let norm = l2_norm(v);
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                push(
                    Some(i),
                    ViolationKind::NotUnitNorm,
                    format!("{kind} has norm {norm}"),
                );
            }
        }
        let r = bundle.reliability()[i].0;
        if !(0.0..=1.0).contains(&r) {
            push(
                Some(i),
                ViolationKind::ReliabilityRange,
                format!("reliability {r} outside [0, 1]"),
            );
        }
    }

    let has = |role| bundle.metas().iter().any(|m| m.role == role);
    if !has(Role::Query) {
        push(None, ViolationKind::MissingRole, "no query samples".into());
    }
    if !has(Role::Gallery) {
        push(None, ViolationKind::MissingRole, "no gallery samples".into());
    }

    ValidationReport { violations: out }
}

/// Rescales every feature vector to unit L2 norm. Vectors already within
/// [`UNIT_NORM_TOL`] of unit length are left untouched, which makes the
/// operation exactly idempotent.
pub fn normalize_bundle(bundle: &EmbeddingBundle) -> Result<EmbeddingBundle> {
    let mut out = bundle.clone();
    for kind in FeatureKind::ALL {
        let m = out.matrix_mut(kind);
        for i in 0..m.rows() {
            let row = m.row_mut(i);
            let norm = l2_norm(row);
            if norm.is_nan() || norm < MIN_NORM {
                return Err(Error::ZeroVector {
                    sample_id: i,
                    which: kind,
                });
            }
            if (norm - 1.0).abs() <= UNIT_NORM_TOL {
                continue;
            }
            for x in row.iter_mut() {
                *x = (f64::from(*x) / norm) as f32;
            }
        }
    }
    Ok(out)
}
