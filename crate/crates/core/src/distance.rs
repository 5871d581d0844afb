//! Dense cosine distances, similarity scaling and deterministic top-k.
//!
//! Storage is f32 upstream; every dot product here is accumulated in f64.
//! Rankings break ties by ascending column index.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::bundle::{EmbeddingBundle, FeatureKind};
use crate::error::{Error, Result};

/// Row-major f64 vectors of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVectors {
    dim: usize,
    data: Vec<f64>,
}

impl DenseVectors {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::DimMismatch {
                context: "dense vectors".into(),
                expected: dim,
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    /// Widens the listed samples' `kind` features.
    pub fn from_bundle(bundle: &EmbeddingBundle, kind: FeatureKind, ids: &[usize]) -> Self {
        let m = bundle.matrix(kind);
        Self {
            dim: m.dim(),
            data: m.to_f64_rows(ids),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// `rows x cols` matrix of distances with the sample ids of each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    row_ids: Vec<usize>,
    col_ids: Vec<usize>,
}

impl DistanceMatrix {
    pub fn new(row_ids: Vec<usize>, col_ids: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let (rows, cols) = (row_ids.len(), col_ids.len());
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: "distance matrix values",
                left: (rows, cols),
                right: (values.len(), 1),
            });
        }
        Ok(Self {
            rows,
            cols,
            values,
            row_ids,
            col_ids,
        })
    }

    /// Matrix filled by `f(row position, col position)` in row-parallel order.
    pub fn from_fn<F>(row_ids: Vec<usize>, col_ids: Vec<usize>, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let (rows, cols) = (row_ids.len(), col_ids.len());
        let mut values = vec![0.0; rows * cols];
        if cols > 0 {
            values
                .par_chunks_mut(cols)
                .enumerate()
                .for_each(|(r, row)| {
                    for (c, v) in row.iter_mut().enumerate() {
                        *v = f(r, c);
                    }
                });
        }
        Self {
            rows,
            cols,
            values,
            row_ids,
            col_ids,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[usize] {
        &self.col_ids
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.par_iter().map(|&v| f(v)).collect(),
            row_ids: self.row_ids.clone(),
            col_ids: self.col_ids.clone(),
        }
    }

    /// Sub-matrix keeping the listed row and column positions.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for &r in rows {
            let row = self.row(r);
            values.extend(cols.iter().map(|&c| row[c]));
        }
        Self {
            rows: rows.len(),
            cols: cols.len(),
            values,
            row_ids: rows.iter().map(|&r| self.row_ids[r]).collect(),
            col_ids: cols.iter().map(|&c| self.col_ids[c]).collect(),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn cosine_distance_unit(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b).clamp(-1.0, 1.0)
}

/// `out[i][j] = 1 - <a_i, b_j>` for unit vectors, cosine clamped to `[-1, 1]`.
pub fn cosine_distance_matrix(
    a: &DenseVectors,
    b: &DenseVectors,
    row_ids: Vec<usize>,
    col_ids: Vec<usize>,
) -> Result<DistanceMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            context: "cosine distance operands".into(),
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if row_ids.len() != a.len() || col_ids.len() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "cosine distance ids",
            left: (row_ids.len(), col_ids.len()),
            right: (a.len(), b.len()),
        });
    }
    Ok(DistanceMatrix::from_fn(row_ids, col_ids, |r, c| {
        cosine_distance_unit(a.row(r), b.row(c))
    }))
}

/// Pairwise cosine distances of `v` with itself. Each unordered pair is
/// computed once, so the result is exactly symmetric.
pub fn pairwise_cosine_distance(v: &DenseVectors, ids: Vec<usize>) -> Result<DistanceMatrix> {
    let n = v.len();
    if ids.len() != n {
        return Err(Error::ShapeMismatch {
            context: "pairwise ids",
            left: (ids.len(), ids.len()),
            right: (n, n),
        });
    }
    let mut values = vec![0.0; n * n];
    if n > 0 {
        values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let a = v.row(i);
            for (j, slot) in row.iter_mut().enumerate().skip(i) {
                *slot = cosine_distance_unit(a, v.row(j));
            }
        });
        for i in 1..n {
            for j in 0..i {
                values[i * n + j] = values[j * n + i];
            }
        }
    }
    DistanceMatrix::new(ids.clone(), ids, values)
}

/// Maps a cosine in `[-1, 1]` to `[0, 1]`; out-of-range input is clamped.
pub fn scaled_similarity(cosine: f64) -> f64 {
    (cosine.clamp(-1.0, 1.0) + 1.0) / 2.0
}

#[inline]
pub(crate) fn rank_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .expect("distances are finite")
        .then(a.1.cmp(&b.1))
}

/// Positions of the `k` smallest entries of `values`, ascending by value then
/// position, skipping position `skip`.
pub fn top_k_row(values: &[f64], k: usize, skip: Option<usize>, row: usize) -> Result<Vec<usize>> {
    let mut cand: Vec<(f64, usize)> = values
        .iter()
        .enumerate()
        .filter(|&(c, _)| Some(c) != skip)
        .map(|(c, &v)| (v, c))
        .collect();
    if cand.len() < k {
        return Err(Error::KTooLarge {
            row,
            k,
            available: cand.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, |a, b| rank_order(*a, *b));
        cand.truncate(k);
    }
    cand.sort_unstable_by(|a, b| rank_order(*a, *b));
    Ok(cand.into_iter().map(|(_, c)| c).collect())
}

/// All positions of `values` sorted ascending by value, ties by position.
pub fn argsort_row(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_unstable_by(|&a, &b| rank_order((values[a], a), (values[b], b)));
    idx
}

/// Per-row k nearest columns. With `exclude_self`, a column whose sample id
/// equals the row's sample id is skipped before counting `k`.
pub fn top_k_neighbors(d: &DistanceMatrix, k: usize, exclude_self: bool) -> Result<Vec<Vec<usize>>> {
    (0..d.rows())
        .into_par_iter()
        .map(|r| {
            let skip = if exclude_self {
                let id = d.row_ids()[r];
                d.col_ids().iter().position(|&c| c == id)
            } else {
                None
            };
            top_k_row(d.row(r), k, skip, r)
        })
        .collect()
}
