//! k-reciprocal intermediary matching.
//!
//! Reciprocal neighbor sets are built per feature space over the union of
//! query and gallery samples, and route distances are hard-set Jaccard
//! distances between sets taken from different spaces.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::bundle::{EmbeddingBundle, FeatureKind};
use crate::distance::{
    pairwise_cosine_distance, rank_order, top_k_neighbors, DenseVectors, DistanceMatrix,
};
use crate::error::{Error, Result};
use crate::routes::{FirstHops, MatchingContext, Mode, RouteDistanceSet};

pub const DEFAULT_K: usize = 20;

/// Members of `probe`'s k-reciprocal neighbor set, in neighbor-rank order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReciprocalSet {
    pub probe: usize,
    pub k: usize,
    pub members: Vec<usize>,
}

impl ReciprocalSet {
    pub fn to_set(&self) -> BTreeSet<usize> {
        self.members.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KrOptions {
    pub k: usize,
    /// Adds the half-k reciprocal sets of members that overlap the probe's
    /// set by at least two thirds. Off by default.
    pub expand: bool,
}

impl Default for KrOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            expand: false,
        }
    }
}

/// `probe`'s k-reciprocal set in the square matrix `d` (self excluded).
pub fn k_reciprocal_set(d: &DistanceMatrix, probe: usize, k: usize) -> Result<ReciprocalSet> {
    let knn = top_k_neighbors(d, k, true)?;
    Ok(ReciprocalSet {
        probe,
        k,
        members: knn[probe]
            .iter()
            .copied()
            .filter(|&j| knn[j].contains(&probe))
            .collect(),
    })
}

/// Reciprocal sets of every row from precomputed k-NN lists.
pub fn reciprocal_sets(knn: &[Vec<usize>], k: usize) -> Vec<ReciprocalSet> {
    knn.par_iter()
        .enumerate()
        .map(|(i, list)| ReciprocalSet {
            probe: i,
            k,
            members: list
                .iter()
                .copied()
                .filter(|&j| knn[j][..k.min(knn[j].len())].contains(&i))
                .collect(),
        })
        .collect()
}

/// Half-k expansion of reciprocal sets; `knn` lists must hold at least `k`
/// entries so their prefixes give the half-k neighbor lists.
pub fn expand_reciprocal_sets(sets: &[ReciprocalSet], knn: &[Vec<usize>], k: usize) -> Vec<ReciprocalSet> {
    let half = k.div_ceil(2);
    let half_sets = reciprocal_sets(
        &knn.iter().map(|l| l[..half.min(l.len())].to_vec()).collect::<Vec<_>>(),
        half,
    );
    sets.par_iter()
        .map(|s| {
            let base = s.to_set();
            let mut members = s.members.clone();
            let mut seen = base.clone();
            for &c in &s.members {
                let cand = &half_sets[c].members;
                let overlap = cand.iter().filter(|m| base.contains(m)).count();
                if 3 * overlap >= 2 * cand.len() {
                    for &m in cand {
                        if m != s.probe && seen.insert(m) {
                            members.push(m);
                        }
                    }
                }
            }
            ReciprocalSet {
                probe: s.probe,
                k: s.k,
                members,
            }
        })
        .collect()
}

/// `1 - |a ∩ b| / |a ∪ b|`; two empty sets are maximally distant.
pub fn jaccard_distance(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    jaccard_from_counts(inter, a.len(), b.len())
}

#[inline]
pub(crate) fn jaccard_from_counts(inter: usize, len_a: usize, len_b: usize) -> f64 {
    let union = len_a + len_b - inter;
    if union == 0 {
        1.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

/// For each right-hand position, which columns contain it.
fn inverted_index(right: &[ReciprocalSet], cols: &[usize], n: usize) -> Vec<Vec<u32>> {
    let mut inv = vec![Vec::new(); n];
    for (c, &col) in cols.iter().enumerate() {
        for &m in &right[col].members {
            inv[m].push(c as u32);
        }
    }
    inv
}

/// Calls `f(col_position, intersection)` for every column sharing at least one
/// member with `left_members`.
fn for_each_overlap(
    left_members: &[usize],
    inv: &[Vec<u32>],
    counts: &mut [u32],
    touched: &mut Vec<u32>,
    mut f: impl FnMut(usize, usize),
) {
    for &m in left_members {
        for &c in &inv[m] {
            if counts[c as usize] == 0 {
                touched.push(c);
            }
            counts[c as usize] += 1;
        }
    }
    for &c in touched.iter() {
        f(c as usize, counts[c as usize] as usize);
        counts[c as usize] = 0;
    }
    touched.clear();
}

/// `out[r][c] = jaccard(left[rows[r]], right[cols[c]])`.
pub fn cross_jaccard(
    left: &[ReciprocalSet],
    right: &[ReciprocalSet],
    rows: &[usize],
    cols: &[usize],
) -> DistanceMatrix {
    let n = left.len().max(right.len());
    let inv = inverted_index(right, cols, n);
    let width = cols.len();
    let mut values = vec![1.0; rows.len() * width];
    if width > 0 {
        values
            .par_chunks_mut(width)
            .enumerate()
            .for_each_init(
                || (vec![0u32; width], Vec::new()),
                |(counts, touched), (r, out)| {
                    let lm = &left[rows[r]].members;
                    for_each_overlap(lm, &inv, counts, touched, |c, inter| {
                        out[c] = jaccard_from_counts(inter, lm.len(), right[cols[c]].members.len());
                    });
                },
            );
    }
    DistanceMatrix::new(rows.to_vec(), cols.to_vec(), values).expect("shape by construction")
}

/// k nearest union samples of every union sample under the cross-Jaccard
/// distance `jaccard(left[i], right[j])`, self excluded. Entries without any
/// overlap all sit at distance 1 and are taken in ascending id order.
pub fn jaccard_knn(left: &[ReciprocalSet], right: &[ReciprocalSet], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = left.len();
    if n == 0 || n - 1 < k {
        return Err(Error::KTooLarge {
            row: 0,
            k,
            available: n.saturating_sub(1),
        });
    }
    let all: Vec<usize> = (0..n).collect();
    let inv = inverted_index(right, &all, n);
    Ok((0..n)
        .into_par_iter()
        .map_init(
            || (vec![0u32; n], Vec::new(), vec![false; n]),
            |(counts, touched, marked), i| {
                let lm = &left[i].members;
                let mut cand: Vec<(f64, usize)> = Vec::new();
                for_each_overlap(lm, &inv, counts, touched, |j, inter| {
                    if j != i {
                        cand.push((jaccard_from_counts(inter, lm.len(), right[j].members.len()), j));
                    }
                });
                cand.sort_unstable_by(|a, b| rank_order(*a, *b));
                cand.truncate(k);
                let mut out: Vec<usize> = cand.iter().map(|&(_, j)| j).collect();
                if out.len() < k {
                    for &j in &out {
                        marked[j] = true;
                    }
                    for j in 0..n {
                        if out.len() == k {
                            break;
                        }
                        if j != i && !marked[j] {
                            out.push(j);
                        }
                    }
                    for &(_, j) in &cand {
                        marked[j] = false;
                    }
                }
                out
            },
        )
        .collect())
}

pub(crate) struct SpaceGraph {
    pub dist: DistanceMatrix,
    pub knn: Vec<Vec<usize>>,
}

pub(crate) fn space_graph(bundle: &EmbeddingBundle, kind: FeatureKind, k: usize) -> Result<SpaceGraph> {
    let ids: Vec<usize> = (0..bundle.len()).collect();
    let v = DenseVectors::from_bundle(bundle, kind, &ids);
    let dist = pairwise_cosine_distance(&v, ids)?;
    let knn = top_k_neighbors(&dist, k, true)?;
    Ok(SpaceGraph { dist, knn })
}

/// Full k-reciprocal matching run, keeping the intermediate structures that
/// feasibility weighting consumes.
pub fn match_kr(bundle: &EmbeddingBundle, opts: KrOptions) -> Result<MatchingContext> {
    let k = opts.k;
    let queries = bundle.query_indices();
    let gallery = bundle.gallery_indices();
    let all: Vec<usize> = (0..bundle.len()).collect();

    let sets = |g: &SpaceGraph| {
        let s = reciprocal_sets(&g.knn, k);
        if opts.expand {
            expand_reciprocal_sets(&s, &g.knn, k)
        } else {
            s
        }
    };

    let (r_o, d_direct) = {
        let o = space_graph(bundle, FeatureKind::Original, k)?;
        (sets(&o), o.dist.select(&queries, &gallery))
    };
    let re = space_graph(bundle, FeatureKind::ClothesRelevant, k)?;
    let ir = space_graph(bundle, FeatureKind::ClothesIrrelevant, k)?;
    let r_re = sets(&re);
    let r_ir = sets(&ir);

    let knn_a = jaccard_knn(&r_re, &r_ir, k)?;
    let mut r_a = reciprocal_sets(&knn_a, k);
    if opts.expand {
        r_a = expand_reciprocal_sets(&r_a, &knn_a, k);
    }

    let routes = RouteDistanceSet {
        d_a: cross_jaccard(&r_re, &r_ir, &queries, &gallery),
        d_b: cross_jaccard(&r_ir, &r_re, &queries, &gallery),
        d_c: cross_jaccard(&r_a, &r_re, &queries, &gallery),
        d_direct,
        d_o: cross_jaccard(&r_o, &r_o, &queries, &gallery),
    };
    let hop = |sets: &[ReciprocalSet]| -> Vec<Vec<usize>> {
        queries.iter().map(|&q| sets[q].members.clone()).collect()
    };
    Ok(MatchingContext {
        mode: Mode::Kr,
        k,
        d_a_query_union: cross_jaccard(&r_re, &r_ir, &queries, &all),
        hops: FirstHops {
            mode: Mode::Kr,
            a: hop(&r_re),
            b: hop(&r_ir),
            c: hop(&r_a),
        },
        queries,
        gallery,
        d_re: re.dist,
        d_ir: ir.dist,
        routes,
    })
}

/// Route distances `d_A`, `d_B`, `d_C`, `d_o` (Jaccard) and `d_direct`.
pub fn route_distances_kr(bundle: &EmbeddingBundle, k: usize) -> Result<RouteDistanceSet> {
    Ok(match_kr(bundle, KrOptions { k, expand: false })?.routes)
}
