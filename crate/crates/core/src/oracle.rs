//! Brute-force reference implementations of the matching, weighting, fusion,
//! metric and triplet kernels, plus the comparison harness used by the
//! acceptance tests and `oracle-check`.
//!
//! Nothing in this module calls the optimized kernels. Only the data types
//! (`DistanceMatrix`, `RouteDistanceSet`, ...) are shared. Everything runs on
//! one thread with plain loops over `Vec<Vec<f64>>`.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::bundle::{EmbeddingBundle, FeatureKind, Role};
use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::eval::{EvalSetting, MaskRules};
use crate::feasibility::{FeasibilityWeights, WeightMode};
use crate::routes::{Mode, RouteDistanceSet};

type Square = Vec<Vec<f64>>;

fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += f64::from(a[i]) * f64::from(b[i]);
    }
    1.0 - s.clamp(-1.0, 1.0)
}

fn space_distances(bundle: &EmbeddingBundle, kind: FeatureKind) -> Square {
    let m = bundle.matrix(kind);
    let n = bundle.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            d[i][j] = cosine_distance(m.row(i), m.row(j));
        }
    }
    d
}

/// Smaller distance first, then smaller index.
fn before(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Insertion sort of `(distance, index)` pairs.
fn sort_pairs(v: &mut [(f64, usize)]) {
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && before(v[j], v[j - 1]) {
            v.swap(j, j - 1);
            j -= 1;
        }
    }
}

/// First `k` entries of row `row` with position `skip` left out.
fn nearest(row: &[f64], k: usize, skip: usize, row_id: usize) -> Result<Vec<usize>> {
    let mut pairs: Vec<(f64, usize)> = Vec::new();
    for (j, &x) in row.iter().enumerate() {
        if j != skip {
            pairs.push((x, j));
        }
    }
    if pairs.len() < k {
        return Err(Error::KTooLarge {
            row: row_id,
            k,
            available: pairs.len(),
        });
    }
    sort_pairs(&mut pairs);
    Ok(pairs[..k].iter().map(|p| p.1).collect())
}

fn knn(d: &Square, k: usize) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for i in 0..d.len() {
        out.push(nearest(&d[i], k, i, i)?);
    }
    Ok(out)
}

/// `R(i, k)` in neighbor-rank order.
fn reciprocal(knn: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for i in 0..knn.len() {
        let mut members = Vec::new();
        for &j in &knn[i] {
            if knn[j].contains(&i) {
                members.push(j);
            }
        }
        out.push(members);
    }
    out
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<usize> = a.iter().copied().collect();
    let b: BTreeSet<usize> = b.iter().copied().collect();
    let inter = a.intersection(&b).count();
    let union = a.union(&b).count();
    if union == 0 {
        1.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

/// Mutual-neighbor indicator vectors, dense.
fn indicators(knn: &[Vec<usize>]) -> Square {
    let n = knn.len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        g[i][i] = 1.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let forward = knn[i].contains(&j);
            let backward = knn[j].contains(&i);
            if forward && backward {
                g[i][j] = 1.0;
            } else if forward || backward {
                g[i][j] = 0.5;
            }
        }
    }
    g
}

/// `h_i = g_i + sum_{j != i} e_ij^2 g_j`.
fn encode(g: &Square, edge: impl Fn(usize, usize) -> f64) -> Square {
    let n = g.len();
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        for c in 0..n {
            h[i][c] = g[i][c];
        }
        for j in 0..n {
            if j == i {
                continue;
            }
            let e = edge(i, j);
            for c in 0..n {
                h[i][c] += e * e * g[j][c];
            }
        }
    }
    h
}

fn neg_cos(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    -(ab / (aa.sqrt() * bb.sqrt()))
}

/// Every structure the feasibility oracle needs, indexed by union sample id.
#[derive(Debug, Clone)]
pub struct NaiveMatch {
    pub mode: Mode,
    pub queries: Vec<usize>,
    pub gallery: Vec<usize>,
    pub d_re: Square,
    pub d_ir: Square,
    /// Raw route-A distance between every pair of union samples.
    pub d_a: Square,
    pub routes: RouteDistanceSet,
    /// Kr mode: ordered reciprocal sets per route first leg.
    reciprocal_hops: Option<[Vec<Vec<usize>>; 3]>,
}

fn query_gallery(bundle: &EmbeddingBundle) -> (Vec<usize>, Vec<usize>) {
    let mut q = Vec::new();
    let mut g = Vec::new();
    for (i, m) in bundle.metas().iter().enumerate() {
        match m.role {
            Role::Query => q.push(i),
            Role::Gallery => g.push(i),
        }
    }
    (q, g)
}

fn qg_matrix(q: &[usize], g: &[usize], f: impl Fn(usize, usize) -> f64) -> DistanceMatrix {
    let mut v = Vec::new();
    for &a in q {
        for &b in g {
            v.push(f(a, b));
        }
    }
    DistanceMatrix::new(q.to_vec(), g.to_vec(), v).expect("naive shape")
}

/// Matching by literal transcription of the route definitions.
pub fn match_naive(bundle: &EmbeddingBundle, k: usize, mode: Mode) -> Result<NaiveMatch> {
    let (queries, gallery) = query_gallery(bundle);
    let d_o = space_distances(bundle, FeatureKind::Original);
    let d_re = space_distances(bundle, FeatureKind::ClothesRelevant);
    let d_ir = space_distances(bundle, FeatureKind::ClothesIrrelevant);
    let knn_o = knn(&d_o, k)?;
    let knn_re = knn(&d_re, k)?;
    let knn_ir = knn(&d_ir, k)?;
    let n = bundle.len();
    let d_direct = qg_matrix(&queries, &gallery, |a, b| d_o[a][b]);

    match mode {
        Mode::Kr => {
            let r_o = reciprocal(&knn_o);
            let r_re = reciprocal(&knn_re);
            let r_ir = reciprocal(&knn_ir);
            let mut d_a = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    d_a[i][j] = jaccard(&r_re[i], &r_ir[j]);
                }
            }
            let r_a = reciprocal(&knn(&d_a, k)?);
            let routes = RouteDistanceSet {
                d_a: qg_matrix(&queries, &gallery, |q, t| jaccard(&r_re[q], &r_ir[t])),
                d_b: qg_matrix(&queries, &gallery, |q, t| jaccard(&r_ir[q], &r_re[t])),
                d_c: qg_matrix(&queries, &gallery, |q, t| jaccard(&r_a[q], &r_re[t])),
                d_direct,
                d_o: qg_matrix(&queries, &gallery, |q, t| jaccard(&r_o[q], &r_o[t])),
            };
            Ok(NaiveMatch {
                mode,
                queries,
                gallery,
                d_re,
                d_ir,
                d_a,
                routes,
                reciprocal_hops: Some([r_re, r_ir, r_a]),
            })
        }
        Mode::Gnn => {
            let h_o = encode(&indicators(&knn_o), |i, j| 1.0 - d_o[i][j]);
            let h_re = encode(&indicators(&knn_re), |i, j| 1.0 - d_re[i][j]);
            let h_ir = encode(&indicators(&knn_ir), |i, j| 1.0 - d_ir[i][j]);
            let mut d_a = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    d_a[i][j] = neg_cos(&h_re[i], &h_ir[j]);
                }
            }
            let g_a = indicators(&knn(&d_a, k)?);
            let h_a = encode(&g_a, |i, j| (-d_a[i][j]).clamp(-1.0, 1.0));
            let routes = RouteDistanceSet {
                d_a: qg_matrix(&queries, &gallery, |q, t| neg_cos(&h_re[q], &h_ir[t])),
                d_b: qg_matrix(&queries, &gallery, |q, t| neg_cos(&h_ir[q], &h_re[t])),
                d_c: qg_matrix(&queries, &gallery, |q, t| neg_cos(&h_a[q], &h_re[t])),
                d_direct,
                d_o: qg_matrix(&queries, &gallery, |q, t| neg_cos(&h_o[q], &h_o[t])),
            };
            Ok(NaiveMatch {
                mode,
                queries,
                gallery,
                d_re,
                d_ir,
                d_a,
                routes,
                reciprocal_hops: None,
            })
        }
    }
}

/// Route distances only.
pub fn route_distances_naive(bundle: &EmbeddingBundle, k: usize, mode: Mode) -> Result<RouteDistanceSet> {
    Ok(match_naive(bundle, k, mode)?.routes)
}

impl NaiveMatch {
    /// Up to `m` first-hop intermediaries of union sample `q` along route
    /// `0 = A, 1 = B, 2 = C`.
    pub fn intermediaries(&self, route: usize, q: usize, m: usize) -> Vec<usize> {
        if let Some(sets) = &self.reciprocal_hops {
            let s = &sets[route][q];
            return s[..m.min(s.len())].to_vec();
        }
        let row = match route {
            0 => &self.d_re[q],
            1 => &self.d_ir[q],
            _ => &self.d_a[q],
        };
        let m = m.min(row.len() - 1);
        nearest(row, m, q, q).expect("m capped")
    }
}

fn scaled(d: f64) -> f64 {
    ((1.0 - d).clamp(-1.0, 1.0) + 1.0) / 2.0
}

/// Per-pair triple loops over intermediaries.
pub fn feasibility_naive(nm: &NaiveMatch, reliability: &[f64], m: usize) -> FeasibilityWeights {
    let mut s = [Vec::new(), Vec::new(), Vec::new()];
    for &q in &nm.queries {
        let sets = [
            nm.intermediaries(0, q, m),
            nm.intermediaries(1, q, m),
            nm.intermediaries(2, q, m),
        ];
        for &t in &nm.gallery {
            for route in 0..3 {
                let members = &sets[route];
                if members.is_empty() {
                    s[route].push(0.0);
                    continue;
                }
                let mut total = 0.0;
                for &i in members {
                    let (first, second) = match route {
                        0 => (scaled(nm.d_re[q][i]), scaled(nm.d_ir[i][t])),
                        1 => (scaled(nm.d_ir[q][i]), scaled(nm.d_re[i][t])),
                        _ => {
                            let d_hat = match nm.mode {
                                Mode::Kr => nm.d_a[q][i],
                                Mode::Gnn => (nm.d_a[q][i] + 1.0) / 2.0,
                            };
                            (1.0 - d_hat, scaled(nm.d_re[i][t]))
                        }
                    };
                    total += first * second * reliability[i];
                }
                s[route].push(total / members.len() as f64);
            }
        }
    }
    let [a, b, c] = s;
    let lambda: Vec<f64> = (0..a.len()).map(|p| 1.0 - (a[p] + b[p] + c[p]) / 3.0).collect();
    let mk = |v: Vec<f64>| DistanceMatrix::new(nm.queries.clone(), nm.gallery.clone(), v).expect("naive shape");
    FeasibilityWeights {
        s_a: mk(a),
        s_b: mk(b),
        s_c: mk(c),
        lambda_o: mk(lambda),
    }
}

/// Constant weights over the match's grid.
pub fn fixed_naive(nm: &NaiveMatch, a: f64, b: f64, c: f64) -> FeasibilityWeights {
    let n = nm.queries.len() * nm.gallery.len();
    let mk = |x: f64| DistanceMatrix::new(nm.queries.clone(), nm.gallery.clone(), vec![x; n]).expect("naive shape");
    FeasibilityWeights {
        s_a: mk(a),
        s_b: mk(b),
        s_c: mk(c),
        lambda_o: mk(1.0 - (a + b + c) / 3.0),
    }
}

/// `d*` from raw route distances; GNN terms are mapped to `[0, 1]` and
/// `d_direct` halved when `rescale_direct`.
pub fn fuse_naive(
    routes: &RouteDistanceSet,
    w: &FeasibilityWeights,
    mode: Mode,
    rescale_direct: bool,
) -> Result<DistanceMatrix> {
    let shape = routes.d_a.shape();
    for m in [&w.s_a, &w.s_b, &w.s_c, &w.lambda_o, &routes.d_direct, &routes.d_o] {
        if m.shape() != shape {
            return Err(Error::ShapeMismatch {
                context: "naive fusion",
                left: shape,
                right: m.shape(),
            });
        }
    }
    let r = |x: f64| match mode {
        Mode::Kr => x,
        Mode::Gnn => (x + 1.0) / 2.0,
    };
    let mut v = Vec::new();
    for row in 0..shape.0 {
        for col in 0..shape.1 {
            let direct = if rescale_direct {
                routes.d_direct.get(row, col) / 2.0
            } else {
                routes.d_direct.get(row, col)
            };
            v.push(
                w.s_a.get(row, col) * r(routes.d_a.get(row, col))
                    + w.s_b.get(row, col) * r(routes.d_b.get(row, col))
                    + w.s_c.get(row, col) * r(routes.d_c.get(row, col))
                    + w.lambda_o.get(row, col) * (direct + r(routes.d_o.get(row, col))),
            );
        }
    }
    DistanceMatrix::new(routes.d_a.row_ids().to_vec(), routes.d_a.col_ids().to_vec(), v)
}

/// Route distances, weights and `d*` of one naive run.
#[derive(Debug, Clone)]
pub struct NaiveRun {
    pub routes: RouteDistanceSet,
    pub weights: FeasibilityWeights,
    pub fused: DistanceMatrix,
}

impl NaiveRun {
    pub fn named(&self) -> Vec<(&'static str, &DistanceMatrix)> {
        vec![
            ("d_A", &self.routes.d_a),
            ("d_B", &self.routes.d_b),
            ("d_C", &self.routes.d_c),
            ("d_direct", &self.routes.d_direct),
            ("d_o", &self.routes.d_o),
            ("s_A", &self.weights.s_a),
            ("s_B", &self.weights.s_b),
            ("s_C", &self.weights.s_c),
            ("lambda_o", &self.weights.lambda_o),
            ("d_star", &self.fused),
        ]
    }
}

/// Whole naive pipeline on a normalized bundle.
pub fn rerank_naive(
    bundle: &EmbeddingBundle,
    k: usize,
    mode: Mode,
    m: usize,
    weights: WeightMode,
    use_reliability: bool,
    rescale_direct: bool,
) -> Result<NaiveRun> {
    let nm = match_naive(bundle, k, mode)?;
    let rel: Vec<f64> = bundle
        .reliability()
        .iter()
        .map(|r| if use_reliability { f64::from(r.0) } else { 1.0 })
        .collect();
    let w = match weights {
        WeightMode::Dynamic => feasibility_naive(&nm, &rel, m),
        WeightMode::Fixed(a, b, c) => fixed_naive(&nm, a, b, c),
    };
    let fused = fuse_naive(&nm.routes, &w, mode, rescale_direct)?;
    Ok(NaiveRun {
        routes: nm.routes,
        weights: w,
        fused,
    })
}

/// Metrics of a naive per-query scan.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveMetrics {
    pub top1: f64,
    pub top5: f64,
    pub top10: f64,
    pub map: f64,
    pub evaluated: usize,
    pub dropped: usize,
}

/// Masking, ranking, CMC and AP written out per query. `None` when no query
/// has a positive.
pub fn evaluate_naive(
    bundle: &EmbeddingBundle,
    d: &DistanceMatrix,
    setting: EvalSetting,
    rules: MaskRules,
) -> Option<NaiveMetrics> {
    let mut hits = [0usize; 3];
    let mut ap_sum = 0.0;
    let mut evaluated = 0;
    for r in 0..d.rows() {
        let q = bundle.meta(d.row_ids()[r]);
        let mut pairs = Vec::new();
        for c in 0..d.cols() {
            let g = bundle.meta(d.col_ids()[c]);
            let same_id = g.identity == q.identity;
            let same_clothes = g.clothes == q.clothes;
            let masked = same_id
                && ((rules.exclude_same_camera && g.camera == q.camera)
                    || (setting == EvalSetting::SameClothes && !same_clothes)
                    || (setting == EvalSetting::ClothesChanging && same_clothes));
            if !masked {
                pairs.push((d.get(r, c), c));
            }
        }
        sort_pairs(&mut pairs);
        let positive: Vec<bool> = pairs
            .iter()
            .map(|&(_, c)| bundle.meta(d.col_ids()[c]).identity == q.identity)
            .collect();
        let Some(first) = positive.iter().position(|&p| p) else {
            continue;
        };
        evaluated += 1;
        for (slot, k) in [1, 5, 10].into_iter().enumerate() {
            if first < k {
                hits[slot] += 1;
            }
        }
        let mut found = 0.0;
        let mut precision_sum = 0.0;
        for (rank, &p) in positive.iter().enumerate() {
            if p {
                found += 1.0;
                precision_sum += found / (rank + 1) as f64;
            }
        }
        ap_sum += precision_sum / found;
    }
    if evaluated == 0 {
        return None;
    }
    let e = evaluated as f64;
    Some(NaiveMetrics {
        top1: hits[0] as f64 / e,
        top5: hits[1] as f64 / e,
        top10: hits[2] as f64 / e,
        map: ap_sum / e,
        evaluated,
        dropped: d.rows() - evaluated,
    })
}

/// Exhaustive triplet enumeration for one anchor: the largest hinge over all
/// (positive, negative) pairs, `None` without a pair.
fn triplet_anchor(
    features: &[Vec<f64>],
    a: usize,
    margin: f64,
    positive: impl Fn(usize) -> bool,
    negative: impl Fn(usize) -> bool,
) -> Option<f64> {
    let dist = |i: usize, j: usize| {
        let mut s = 0.0;
        for c in 0..features[i].len() {
            s += features[i][c] * features[j][c];
        }
        1.0 - f64::clamp(s, -1.0, 1.0)
    };
    let mut best: Option<f64> = None;
    for p in 0..features.len() {
        if p == a || !positive(p) {
            continue;
        }
        for n in 0..features.len() {
            if n == a || !negative(n) {
                continue;
            }
            let v = (dist(a, p) - dist(a, n) + margin).max(0.0);
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    }
    best
}

fn mean_some(terms: Vec<Option<f64>>) -> Result<f64> {
    let v: Vec<f64> = terms.into_iter().flatten().collect();
    if v.is_empty() {
        Err(Error::NoValidAnchor)
    } else {
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Clothes-aware triplet loss by enumerating every triplet.
pub fn clothes_triplet_naive(features: &[Vec<f64>], identity: &[i32], clothes: &[i32], margin: f64) -> Result<f64> {
    mean_some(
        (0..features.len())
            .map(|a| {
                triplet_anchor(
                    features,
                    a,
                    margin,
                    |j| identity[j] == identity[a] && clothes[j] == clothes[a],
                    |j| identity[j] == identity[a] && clothes[j] != clothes[a],
                )
            })
            .collect(),
    )
}

/// Identity triplet loss by enumerating every triplet.
pub fn identity_triplet_naive(features: &[Vec<f64>], identity: &[i32], margin: f64) -> Result<f64> {
    mean_some(
        (0..features.len())
            .map(|a| {
                triplet_anchor(
                    features,
                    a,
                    margin,
                    |j| identity[j] == identity[a],
                    |j| identity[j] != identity[a],
                )
            })
            .collect(),
    )
}

/// Where the largest difference of a comparison was found.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffLocation {
    pub row: usize,
    pub col: usize,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffReport {
    pub max_abs_diff: f64,
    pub worst_location: Option<DiffLocation>,
    pub tolerance: f64,
    pub pass: bool,
}

impl fmt::Display for DiffReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} max_abs_diff={:.3e} tol={:.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.max_abs_diff,
            self.tolerance
        )?;
        if let Some(l) = &self.worst_location {
            write!(f, " at {}[{}, {}]", l.stage, l.row, l.col)?;
        }
        Ok(())
    }
}

/// Elementwise max-abs difference. A NaN on either side counts as an
/// infinite difference unless both sides are NaN.
pub fn compare(stage: &str, reference: &DistanceMatrix, optimized: &DistanceMatrix, tolerance: f64) -> Result<DiffReport> {
    if reference.shape() != optimized.shape() {
        return Err(Error::ShapeMismatch {
            context: "oracle comparison",
            left: reference.shape(),
            right: optimized.shape(),
        });
    }
    let mut worst = 0.0f64;
    let mut at = None;
    for r in 0..reference.rows() {
        for c in 0..reference.cols() {
            let (a, b) = (reference.get(r, c), optimized.get(r, c));
            let diff = match (a.is_nan(), b.is_nan()) {
                (true, true) => 0.0,
                (false, false) => (a - b).abs(),
                _ => f64::INFINITY,
            };
            if diff > worst || (at.is_none() && diff > 0.0) {
                worst = diff;
                at = Some((r, c));
            }
        }
    }
    Ok(DiffReport {
        max_abs_diff: worst,
        worst_location: at.map(|(row, col)| DiffLocation {
            row,
            col,
            stage: stage.to_string(),
        }),
        tolerance,
        pass: worst <= tolerance,
    })
}

/// Merges per-stage reports into the worst one.
pub fn worst_of(reports: &[DiffReport], tolerance: f64) -> DiffReport {
    let mut out = DiffReport {
        max_abs_diff: 0.0,
        worst_location: None,
        tolerance,
        pass: true,
    };
    for r in reports {
        if r.max_abs_diff > out.max_abs_diff || (out.worst_location.is_none() && r.worst_location.is_some()) {
            out.max_abs_diff = r.max_abs_diff;
            out.worst_location = r.worst_location.clone();
        }
        out.pass &= r.pass;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::tests::meta;
    use crate::bundle::{FeatureMatrix, ReliabilityScore};

    fn m(v: Vec<f64>, cols: usize) -> DistanceMatrix {
        let rows = v.len() / cols;
        DistanceMatrix::new((0..rows).collect(), (0..cols).collect(), v).unwrap()
    }

    #[test]
    fn identical_matrices_pass() {
        let a = m(vec![0.1, 0.2, 0.3, 0.4], 2);
        let r = compare("d_A", &a, &a, 1e-12).unwrap();
        assert!(r.pass);
        assert_eq!(r.max_abs_diff, 0.0);
        assert!(r.worst_location.is_none());
    }

    #[test]
    fn perturbed_cell_fails_at_location() {
        let a = m(vec![0.1, 0.2, 0.3, 0.4], 2);
        let b = m(vec![0.1, 0.2, 0.301, 0.4], 2);
        let r = compare("s_B", &a, &b, 1e-6).unwrap();
        assert!(!r.pass);
        let l = r.worst_location.unwrap();
        assert_eq!((l.row, l.col, l.stage.as_str()), (1, 0, "s_B"));
        assert!((r.max_abs_diff - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn diff_at_tolerance_passes() {
        let a = m(vec![0.5], 1);
        let b = m(vec![0.75], 1);
        assert!(compare("x", &a, &b, 0.25).unwrap().pass);
    }

    #[test]
    fn compare_shape_mismatch() {
        assert!(matches!(
            compare("x", &m(vec![0.0; 4], 2), &m(vec![0.0; 4], 4), 0.0),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn nan_counts_as_infinite() {
        let r = compare("x", &m(vec![f64::NAN], 1), &m(vec![0.0], 1), 1.0).unwrap();
        assert!(!r.pass);
    }

    fn bundle(points: &[[f32; 2]], roles: &[Role], rel: f32) -> EmbeddingBundle {
        let n = points.len();
        let rows: Vec<Vec<f32>> = points.iter().map(|p| p.to_vec()).collect();
        let f = FeatureMatrix::from_rows(2, &rows).unwrap();
        let metas = (0..n).map(|i| meta(i, i as i32, i as i32, roles[i])).collect();
        EmbeddingBundle::new(metas, f.clone(), f.clone(), f, vec![ReliabilityScore(rel); n]).unwrap()
    }

    #[test]
    fn two_samples_have_empty_sets() {
        // k = 1: each is the other's only neighbor, so the sets are {1} and {0}
        // and cross-sample Jaccard is maximal.
        let b = bundle(&[[1.0, 0.0], [0.0, 1.0]], &[Role::Query, Role::Gallery], 1.0);
        let r = route_distances_naive(&b, 1, Mode::Kr).unwrap();
        assert_eq!(r.d_a.get(0, 0), 1.0);
    }

    #[test]
    fn clique_of_identical_points() {
        let p = [[1.0, 0.0]; 4];
        let roles = [Role::Query, Role::Gallery, Role::Gallery, Role::Gallery];
        let b = bundle(&p, &roles, 1.0);
        // k = 3: every set is "all but me", so two distinct samples share 2 of 4.
        let r = route_distances_naive(&b, 3, Mode::Kr).unwrap();
        for t in 0..3 {
            assert_eq!(r.d_o.get(0, t), 0.5);
        }
        let nm = match_naive(&b, 3, Mode::Kr).unwrap();
        for i in 0..4 {
            assert_eq!(nm.d_a[i][i], 0.0);
        }
    }

    #[test]
    fn zero_reliability_gives_direct_weight() {
        let p = [[1.0, 0.0], [0.8, 0.6], [0.6, 0.8], [0.0, 1.0]];
        let roles = [Role::Query, Role::Gallery, Role::Gallery, Role::Gallery];
        let run = rerank_naive(&bundle(&p, &roles, 0.0), 2, Mode::Kr, 10, WeightMode::Dynamic, true, true).unwrap();
        assert!(run.weights.s_a.values().iter().all(|&x| x == 0.0));
        assert!(run.weights.lambda_o.values().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn identical_world_has_unit_scores() {
        let p = [[1.0, 0.0]; 4];
        let roles = [Role::Query, Role::Gallery, Role::Gallery, Role::Gallery];
        let run = rerank_naive(&bundle(&p, &roles, 1.0), 3, Mode::Kr, 10, WeightMode::Dynamic, true, true).unwrap();
        for w in [&run.weights.s_a, &run.weights.s_b] {
            assert!(w.values().iter().all(|&x| (x - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn triplet_enumeration_matches_hand_value() {
        let f = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]];
        // anchor 0: positive 1 at distance 1, negative 2 at distance 2 -> 0
        let v = identity_triplet_naive(&f, &[0, 0, 1, 1], 0.3).unwrap();
        assert!(v >= 0.0);
        assert!(matches!(
            identity_triplet_naive(&f, &[0, 1, 2, 3], 0.3),
            Err(Error::NoValidAnchor)
        ));
    }
}
