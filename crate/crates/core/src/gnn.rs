//! Graph-based intermediary matching: mutual-neighbor indicator vectors,
//! one-hop edge-weighted aggregation, and negative-cosine route distances.

use rayon::prelude::*;

use crate::bundle::{EmbeddingBundle, FeatureKind};
use crate::distance::{dot, top_k_neighbors, DistanceMatrix};
use crate::error::{Error, Result};
use crate::kreciprocal::space_graph;
use crate::routes::{FirstHops, MatchingContext, Mode, RouteDistanceSet};

/// Sparse mutual-neighbor indicator of one sample. Entries are 1 for mutual
/// k-NN, 0.5 for one-sided, and absent (0) otherwise; the owner's own entry
/// is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborVector {
    pub owner: usize,
    /// `(index, value)` sorted by index, zeros omitted.
    pub entries: Vec<(usize, f64)>,
}

impl NeighborVector {
    pub fn get(&self, j: usize) -> f64 {
        self.entries
            .binary_search_by_key(&j, |&(i, _)| i)
            .map(|p| self.entries[p].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for &(j, x) in &self.entries {
            v[j] = x;
        }
        v
    }
}

/// Dense one-hop encoding `h_i = g_i + sum_{j != i} e_ij^2 g_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEncoding {
    pub owner: usize,
    pub values: Vec<f64>,
}

/// Neighbor vectors of all rows from k-NN lists over the same index space.
pub fn neighbor_vectors(knn: &[Vec<usize>]) -> Vec<NeighborVector> {
    let n = knn.len();
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, list) in knn.iter().enumerate() {
        for &j in list {
            incoming[j].push(i);
        }
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(knn[i].len() + incoming[i].len() + 1);
            entries.push((i, 1.0));
            for &j in &knn[i] {
                if j != i {
                    let mutual = incoming[i].contains(&j);
                    entries.push((j, if mutual { 1.0 } else { 0.5 }));
                }
            }
            for &j in &incoming[i] {
                if j != i && !knn[i].contains(&j) {
                    entries.push((j, 0.5));
                }
            }
            entries.sort_unstable_by_key(|&(j, _)| j);
            NeighborVector { owner: i, entries }
        })
        .collect()
}

/// Neighbor vector of row `i` of the square matrix `d`.
pub fn neighbor_vector(d: &DistanceMatrix, k: usize, i: usize) -> Result<NeighborVector> {
    let knn = top_k_neighbors(d, k, true)?;
    Ok(neighbor_vectors(&knn).swap_remove(i))
}

/// Row-major dense encodings with cached norms.
#[derive(Debug, Clone)]
pub(crate) struct Encodings {
    n: usize,
    values: Vec<f64>,
    norms: Vec<f64>,
}

impl Encodings {
    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// `-cos(self_i, other_j)`
    fn neg_cos(&self, i: usize, other: &Encodings, j: usize) -> f64 {
        -(dot(self.row(i), other.row(j)) / (self.norms[i] * other.norms[j]))
    }
}

fn encode_with<F>(g: &[NeighborVector], edge: F) -> Result<Encodings>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let n = g.len();
    let mut values = vec![0.0; n * n];
    if n > 0 {
        values.par_chunks_mut(n).enumerate().for_each(|(i, h)| {
            for &(c, v) in &g[i].entries {
                h[c] += v;
            }
            for (j, gj) in g.iter().enumerate() {
                if j == i {
                    continue;
                }
                let e = edge(i, j);
                let w = e * e;
                if w == 0.0 {
                    continue;
                }
                for &(c, v) in &gj.entries {
                    h[c] += w * v;
                }
            }
        });
    }
    let norms: Vec<f64> = values
        .par_chunks(n.max(1))
        .map(|h| dot(h, h).sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&x| x < 1e-12) {
        return Err(Error::ZeroVector {
            sample_id: i,
            which: FeatureKind::Original,
        });
    }
    Ok(Encodings { n, values, norms })
}

/// Encodings of every vector in `g_all` with edge weights `edges[i][j]`
/// (cosine similarities).
pub fn neighbor_encoding(g_all: &[NeighborVector], edges: &DistanceMatrix) -> Result<Vec<NeighborEncoding>> {
    let n = g_all.len();
    if edges.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            context: "edge weights",
            left: edges.shape(),
            right: (n, n),
        });
    }
    let mut values = vec![0.0; n * n];
    values.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, h)| {
        for &(c, v) in &g_all[i].entries {
            h[c] += v;
        }
        for (j, gj) in g_all.iter().enumerate() {
            if j != i {
                let w = edges.get(i, j) * edges.get(i, j);
                for &(c, v) in &gj.entries {
                    h[c] += w * v;
                }
            }
        }
    });
    Ok(values
        .chunks(n.max(1))
        .take(n)
        .enumerate()
        .map(|(owner, v)| NeighborEncoding {
            owner,
            values: v.to_vec(),
        })
        .collect())
}

fn cross_neg_cos(left: &Encodings, right: &Encodings, rows: &[usize], cols: &[usize]) -> DistanceMatrix {
    DistanceMatrix::from_fn(rows.to_vec(), cols.to_vec(), |r, c| {
        left.neg_cos(rows[r], right, cols[c])
    })
}

/// Full GNN matching run over the union of queries and gallery.
pub fn match_gnn(bundle: &EmbeddingBundle, k: usize) -> Result<MatchingContext> {
    let queries = bundle.query_indices();
    let gallery = bundle.gallery_indices();
    let all: Vec<usize> = (0..bundle.len()).collect();

    let encode_space = |kind| -> Result<_> {
        let sg = space_graph(bundle, kind, k)?;
        let g = neighbor_vectors(&sg.knn);
        let h = encode_with(&g, |i, j| 1.0 - sg.dist.get(i, j))
            .map_err(|e| relabel_zero(e, kind))?;
        Ok((sg, h))
    };
    let (o, h_o) = encode_space(FeatureKind::Original)?;
    let (re, h_re) = encode_space(FeatureKind::ClothesRelevant)?;
    let (ir, h_ir) = encode_space(FeatureKind::ClothesIrrelevant)?;

    let d_a_union = cross_neg_cos(&h_re, &h_ir, &all, &all);
    let knn_a = top_k_neighbors(&d_a_union, k, true)?;
    let g_a = neighbor_vectors(&knn_a);
    let h_a = encode_with(&g_a, |i, j| (-d_a_union.get(i, j)).clamp(-1.0, 1.0))
        .map_err(|e| relabel_zero(e, FeatureKind::ClothesRelevant))?;

    let routes = RouteDistanceSet {
        d_a: d_a_union.select(&queries, &gallery),
        // -cos(h_ir_q, h_re_t) is the transposed route-A entry.
        d_b: DistanceMatrix::from_fn(queries.clone(), gallery.clone(), |r, c| {
            d_a_union.get(gallery[c], queries[r])
        }),
        d_c: cross_neg_cos(&h_a, &h_re, &queries, &gallery),
        d_direct: o.dist.select(&queries, &gallery),
        d_o: cross_neg_cos(&h_o, &h_o, &queries, &gallery),
    };
    let hop = |knn: &[Vec<usize>]| -> Vec<Vec<usize>> {
        queries.iter().map(|&q| knn[q].clone()).collect()
    };
    Ok(MatchingContext {
        mode: Mode::Gnn,
        k,
        d_a_query_union: d_a_union.select(&queries, &all),
        hops: FirstHops {
            mode: Mode::Gnn,
            a: hop(&re.knn),
            b: hop(&ir.knn),
            c: hop(&knn_a),
        },
        queries,
        gallery,
        d_re: re.dist,
        d_ir: ir.dist,
        routes,
    })
}

fn relabel_zero(e: Error, kind: FeatureKind) -> Error {
    match e {
        Error::ZeroVector { sample_id, .. } => Error::ZeroVector {
            sample_id,
            which: kind,
        },
        other => other,
    }
}

/// Route distances in `[-1, 1]` from neighbor encodings.
pub fn route_distances_gnn(bundle: &EmbeddingBundle, k: usize) -> Result<RouteDistanceSet> {
    Ok(match_gnn(bundle, k)?.routes)
}
