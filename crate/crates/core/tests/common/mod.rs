//! Seeded invariant checks shared by the property suite and the acceptance
//! target. Each check builds its own inputs from the seed and returns a
//! description of the first violation.
#![allow(dead_code, unused_imports)]

use std::collections::HashSet;

use imrank_core::bundle::{normalize_bundle, validate_bundle, ViolationKind};
use imrank_core::bundle_io::{load_bundle, save_bundle, save_bundle_csv};
use imrank_core::decoupling::{
    clothes_aware_triplet_loss, clothes_aware_triplet_terms, clothes_changing_variance, identity_triplet_loss,
    sampled_classification_loss, total_loss, LabeledBatch, LinearClassifier, LossParts,
};
use imrank_core::distance::{
    argsort_row, cosine_distance_matrix, pairwise_cosine_distance, scaled_similarity, top_k_neighbors, DenseVectors,
};
use imrank_core::eval::{cmc_curve, evaluate, mean_average_precision, EvalSetting, MaskRules};
use imrank_core::feasibility::{
    feasibility_scores, fixed_weight_mode, fuse_final_distance, intermediary_set, prepare_for_fusion, WeightMode,
};
use imrank_core::gnn::{neighbor_encoding, neighbor_vectors};
use imrank_core::kreciprocal::{cross_jaccard, jaccard_distance, reciprocal_sets};
use imrank_core::oracle::{clothes_triplet_naive, evaluate_naive, identity_triplet_naive};
use imrank_core::pipeline::{match_routes, prepare_bundle, reliability_vector, rerank, RerankConfig};
use imrank_core::routes::{Route, RouteDistanceSet};
use imrank_core::synth::{generate_world, WorldConfig};
use imrank_core::{DistanceMatrix, EmbeddingBundle, FeatureKind, FeatureMatrix, Mode, ReliabilityScore};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = fn(u64) -> Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn small_config(seed: u64) -> WorldConfig {
    WorldConfig {
        n_identities: 6,
        clothes_per_identity: 2,
        samples_per_clothes: 4,
        d_o: 16,
        d_ir: 16,
        d_re: 16,
        degrade_fraction: 0.3,
        query_fraction: 0.5,
        seed,
        ..WorldConfig::default()
    }
}

/// Normalized 48-sample world.
pub fn small_world(seed: u64) -> EmbeddingBundle {
    prepare_bundle(&generate_world(&small_config(seed)).unwrap().0).unwrap()
}

fn cfg(mode: Mode, k: usize) -> RerankConfig {
    RerankConfig {
        mode,
        k,
        m_intermediaries: 5,
        ..RerankConfig::default()
    }
}

fn random_rows(r: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..n).map(|_| (0..dim).map(|_| r.random_range(-1.0f32..1.0)).collect()).collect()
}

pub fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

// --- sample model ---

pub fn bundle_round_trip(seed: u64) -> Result<(), String> {
    let (b, _) = generate_world(&small_config(seed)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&b, dir.path()).unwrap();
    ensure!(load_bundle(dir.path()).unwrap() == b, "directory round trip changed the bundle");
    let csv = dir.path().join("b.csv");
    save_bundle_csv(&b, &csv).unwrap();
    ensure!(load_bundle(&csv).unwrap() == b, "csv round trip changed the bundle");
    Ok(())
}

pub fn normalize_idempotent(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let mut b = generate_world(&small_config(seed)).unwrap().0;
    for kind in FeatureKind::ALL {
        let m = b.matrix_mut(kind);
        for i in 0..m.rows() {
            let s = r.random_range(0.1f32..10.0);
            m.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
    }
    let once = normalize_bundle(&b).unwrap();
    let twice = normalize_bundle(&once).unwrap();
    for kind in FeatureKind::ALL {
        let (a, c) = (once.matrix(kind).as_slice(), twice.matrix(kind).as_slice());
        let worst = a.iter().zip(c).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        ensure!(worst <= 1e-6, "normalize not idempotent on {kind}: {worst}");
    }
    let v = validate_bundle(&once);
    ensure!(
        !v.violations.iter().any(|x| x.kind == ViolationKind::NotUnitNorm),
        "norm violations after normalize"
    );
    Ok(())
}

// --- distance engine ---

pub fn cosine_symmetric(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.random_range(2..30);
    let rows = random_rows(&mut r, n, 8);
    let data: Vec<f64> = rows
        .iter()
        .flat_map(|row| {
            let norm = row.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            row.iter().map(move |&x| f64::from(x) / norm)
        })
        .collect();
    let v = DenseVectors::new(8, data).unwrap();
    let ids: Vec<usize> = (0..n).collect();
    let full = cosine_distance_matrix(&v, &v, ids.clone(), ids.clone()).unwrap();
    let pair = pairwise_cosine_distance(&v, ids).unwrap();
    for i in 0..n {
        ensure!(full.get(i, i).abs() <= 1e-6, "diagonal {i} = {}", full.get(i, i));
        for j in 0..n {
            ensure!((full.get(i, j) - full.get(j, i)).abs() <= 1e-6, "asymmetric at ({i}, {j})");
            ensure!(pair.get(i, j) == pair.get(j, i), "pairwise not exactly symmetric");
            ensure!((pair.get(i, j) - full.get(i, j)).abs() <= 1e-12, "pairwise differs from full");
        }
    }
    Ok(())
}

pub fn scaled_similarity_monotone(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for _ in 0..100 {
        let a = r.random_range(-1.0..=1.0);
        let b = r.random_range(-1.0..=1.0);
        let (sa, sb) = (scaled_similarity(a), scaled_similarity(b));
        ensure!((0.0..=1.0).contains(&sa), "scaled {a} = {sa}");
        ensure!((a < b) <= (sa <= sb), "not monotone at {a}, {b}");
    }
    ensure!(scaled_similarity(-1.0) == 0.0 && scaled_similarity(1.0) == 1.0, "endpoints");
    Ok(())
}

/// top-k and the full re-ranking output are bit-identical with 1 and 4 workers.
pub fn thread_count_determinism(seed: u64) -> Result<(), String> {
    let b = small_world(seed);
    for mode in [Mode::Kr, Mode::Gnn] {
        let run = || {
            let out = rerank(&b, &cfg(mode, 5)).unwrap();
            let d = out.routes.d_direct.clone();
            (top_k_neighbors(&d, 5, false).unwrap(), out.fused)
        };
        let one = in_pool(1, run);
        let four = in_pool(4, run);
        ensure!(one == four, "{mode} output depends on the worker count");
    }
    Ok(())
}

// --- k-reciprocal ---

fn space_sets(b: &EmbeddingBundle, kind: FeatureKind, k: usize) -> Vec<imrank_core::kreciprocal::ReciprocalSet> {
    let ids: Vec<usize> = (0..b.len()).collect();
    let v = DenseVectors::from_bundle(b, kind, &ids);
    let d = pairwise_cosine_distance(&v, ids).unwrap();
    reciprocal_sets(&top_k_neighbors(&d, k, true).unwrap(), k)
}

pub fn kr_cross_route_symmetry(seed: u64) -> Result<(), String> {
    let b = small_world(seed);
    let k = 5;
    let (q, g) = (b.query_indices(), b.gallery_indices());
    let re = space_sets(&b, FeatureKind::ClothesRelevant, k);
    let ir = space_sets(&b, FeatureKind::ClothesIrrelevant, k);
    let d_a = cross_jaccard(&re, &ir, &q, &g);
    let swapped = cross_jaccard(&ir, &re, &g, &q);
    for r in 0..q.len() {
        for c in 0..g.len() {
            ensure!(d_a.get(r, c) == swapped.get(c, r), "d_A({r},{c}) differs from swapped route");
        }
    }
    Ok(())
}

fn all_routes(routes: &RouteDistanceSet) -> [&DistanceMatrix; 4] {
    [&routes.d_a, &routes.d_b, &routes.d_c, &routes.d_o]
}

pub fn kr_range(seed: u64) -> Result<(), String> {
    let b = small_world(seed);
    let out = rerank(&b, &cfg(Mode::Kr, 5)).unwrap();
    for m in all_routes(&out.routes) {
        ensure!(m.values().iter().all(|v| (0.0..=1.0).contains(v)), "route outside [0, 1]");
    }
    ensure!(
        out.routes.d_direct.values().iter().all(|v| (0.0..=2.0).contains(v)),
        "direct outside [0, 2]"
    );
    Ok(())
}

pub fn jaccard_monotone_overlap(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let mut a: std::collections::BTreeSet<usize> = (0..r.random_range(0..8)).map(|_| r.random_range(0..20)).collect();
    let mut b: std::collections::BTreeSet<usize> = (0..r.random_range(0..8)).map(|_| r.random_range(0..20)).collect();
    let before = jaccard_distance(&a, &b);
    ensure!((0.0..=1.0).contains(&before), "jaccard {before} outside [0, 1]");
    let x = r.random_range(0..25);
    a.insert(x);
    b.insert(x);
    let after = jaccard_distance(&a, &b);
    ensure!(after <= before, "adding shared {x} raised the distance {before} -> {after}");
    Ok(())
}

/// Identical features in all three spaces make `d_A`, `d_B` and `d_o` equal.
pub fn kr_degenerate_spaces(seed: u64) -> Result<(), String> {
    let mut b = small_world(seed);
    let f = b.matrix(FeatureKind::ClothesIrrelevant).clone();
    *b.matrix_mut(FeatureKind::ClothesRelevant) = f.clone();
    *b.matrix_mut(FeatureKind::Original) = f;
    let out = rerank(&b, &cfg(Mode::Kr, 5)).unwrap();
    ensure!(out.routes.d_a == out.routes.d_b, "d_A != d_B");
    ensure!(out.routes.d_a.values() == out.routes.d_o.values(), "d_A != d_o");
    Ok(())
}

// --- gnn ---

pub fn gnn_aggregation_dominates_indicator(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let b = small_world(seed);
    let ids: Vec<usize> = (0..b.len()).collect();
    let v = DenseVectors::from_bundle(&b, FeatureKind::ClothesRelevant, &ids);
    let d = pairwise_cosine_distance(&v, ids.clone()).unwrap();
    let g = neighbor_vectors(&top_k_neighbors(&d, r.random_range(1..10), true).unwrap());
    let edges = d.map(|x| 1.0 - x);
    let h = neighbor_encoding(&g, &edges).unwrap();
    for (gi, hi) in g.iter().zip(&h) {
        for (c, &hv) in hi.values.iter().enumerate() {
            ensure!(hv >= gi.get(c), "h[{}][{c}] below g", gi.owner);
        }
    }
    Ok(())
}

/// Shuffling sample order and mapping back gives the same GNN routes.
pub fn gnn_relabel_equivariance(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let b = small_world(seed);
    let mut perm: Vec<usize> = (0..b.len()).collect();
    perm.shuffle(&mut r);
    let p = b.subset(&perm);
    let base = rerank(&b, &cfg(Mode::Gnn, 5)).unwrap().routes;
    let moved = rerank(&p, &cfg(Mode::Gnn, 5)).unwrap().routes;
    // position in the permuted bundle -> original sample id
    for (name, m) in moved.named() {
        let orig = base.named().into_iter().find(|(n, _)| *n == name).unwrap().1;
        for rr in 0..m.rows() {
            for cc in 0..m.cols() {
                let (oq, og) = (perm[m.row_ids()[rr]], perm[m.col_ids()[cc]]);
                let orow = orig.row_ids().iter().position(|&x| x == oq).unwrap();
                let ocol = orig.col_ids().iter().position(|&x| x == og).unwrap();
                ensure!(
                    (m.get(rr, cc) - orig.get(orow, ocol)).abs() <= 1e-12,
                    "{name} changed under relabeling"
                );
            }
        }
    }
    Ok(())
}

pub fn gnn_clique_is_minus_one(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let n = r.random_range(3..8);
    let row: Vec<f32> = {
        let v = random_rows(&mut r, 1, 4).remove(0);
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter().map(|x| x / norm).collect()
    };
    let f = FeatureMatrix::from_rows(4, &vec![row; n]).unwrap();
    let metas = (0..n)
        .map(|i| imrank_core::SampleMeta {
            sample_id: i,
            identity: i as i32,
            clothes: i as i32,
            camera: 0,
            role: if i == 0 { imrank_core::Role::Query } else { imrank_core::Role::Gallery },
        })
        .collect();
    let b = EmbeddingBundle::new(metas, f.clone(), f.clone(), f, vec![ReliabilityScore(1.0); n]).unwrap();
    let ctx = match_routes(&b, &cfg(Mode::Gnn, n - 1)).unwrap();
    let g = neighbor_vectors(&top_k_neighbors(&ctx.d_re, n - 1, true).unwrap());
    for gi in &g {
        ensure!(gi.to_dense(n).iter().all(|&x| x == 1.0), "indicator not all ones");
    }
    for m in all_routes(&ctx.routes) {
        ensure!(m.values().iter().all(|&v| (v + 1.0).abs() <= 1e-12), "clique route not -1");
    }
    Ok(())
}

// --- feasibility and fusion ---

pub fn weights_in_range(seed: u64) -> Result<(), String> {
    let b = small_world(seed);
    for mode in [Mode::Kr, Mode::Gnn] {
        let w = rerank(&b, &cfg(mode, 5)).unwrap().weights;
        for m in [&w.s_a, &w.s_b, &w.s_c, &w.lambda_o] {
            ensure!(m.values().iter().all(|v| (0.0..=1.0).contains(v)), "{mode} weight outside [0, 1]");
        }
        for p in 0..w.s_a.values().len() {
            let s = (w.s_a.values()[p] + w.s_b.values()[p] + w.s_c.values()[p]) / 3.0;
            ensure!((w.lambda_o.values()[p] + s - 1.0).abs() <= 1e-12, "lambda_o + mean(s) != 1");
        }
    }
    Ok(())
}

fn random_routes(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> RouteDistanceSet {
    let mut m = || {
        DistanceMatrix::new(
            (0..rows).collect(),
            (rows..rows + cols).collect(),
            (0..rows * cols).map(|_| r.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    };
    RouteDistanceSet {
        d_a: m(),
        d_b: m(),
        d_c: m(),
        d_direct: m(),
        d_o: m(),
    }
}

pub fn fusion_monotone(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let routes = random_routes(&mut r, 3, 4);
    let (a, b, c) = (r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0));
    let w = fixed_weight_mode(a, b, c, routes.d_a.row_ids(), routes.d_a.col_ids()).unwrap();
    let base = fuse_final_distance(&routes, &w).unwrap();
    for which in 0..5 {
        let mut bumped = routes.clone();
        let m = match which {
            0 => &mut bumped.d_a,
            1 => &mut bumped.d_b,
            2 => &mut bumped.d_c,
            3 => &mut bumped.d_direct,
            _ => &mut bumped.d_o,
        };
        let delta = r.random_range(0.0..0.5);
        *m = m.map(|x| x + delta);
        let after = fuse_final_distance(&bumped, &w).unwrap();
        for p in 0..base.values().len() {
            ensure!(after.values()[p] >= base.values()[p], "raising route {which} lowered d*");
        }
    }
    Ok(())
}

pub fn fusion_scale_invariance(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let routes = random_routes(&mut r, 4, 6);
    let w = fixed_weight_mode(
        r.random_range(0.0..1.0),
        r.random_range(0.0..1.0),
        r.random_range(0.0..1.0),
        routes.d_a.row_ids(),
        routes.d_a.col_ids(),
    )
    .unwrap();
    let base = fuse_final_distance(&routes, &w).unwrap();
    let c = [0.25, 0.5, 2.0, 4.0][r.random_range(0..4)];
    let scale = |m: &DistanceMatrix| m.map(|x| x * c);
    let scaled = RouteDistanceSet {
        d_a: scale(&routes.d_a),
        d_b: scale(&routes.d_b),
        d_c: scale(&routes.d_c),
        d_direct: scale(&routes.d_direct),
        d_o: scale(&routes.d_o),
    };
    let after = fuse_final_distance(&scaled, &w).unwrap();
    for p in 0..base.values().len() {
        ensure!((after.values()[p] - c * base.values()[p]).abs() <= 1e-12, "d* not scaled by {c}");
    }
    for row in 0..base.rows() {
        ensure!(argsort_row(base.row(row)) == argsort_row(after.row(row)), "ranking changed under scaling");
    }
    Ok(())
}

pub fn zero_reliability_kills_route(seed: u64) -> Result<(), String> {
    let b = small_world(seed);
    for mode in [Mode::Kr, Mode::Gnn] {
        let c = cfg(mode, 5);
        let ctx = match_routes(&b, &c).unwrap();
        let mut rel = reliability_vector(&b, true);
        let set = intermediary_set(Route::A, 0, &ctx, c.m_intermediaries);
        for &i in &set.members {
            rel[i] = 0.0;
        }
        let w = feasibility_scores(&ctx, &rel, c.m_intermediaries).unwrap();
        ensure!(w.s_a.row(0).iter().all(|&x| x == 0.0), "{mode}: s_A of query 0 not zero");
    }
    Ok(())
}

// --- decoupling ---

/// Random batch of 2..=16 unit features over a few identities with
/// identity-private clothes labels.
pub fn random_batch(seed: u64) -> LabeledBatch {
    let mut r = rng(seed);
    let n = r.random_range(2..=16);
    let dim = r.random_range(2..6);
    let mut features = Vec::new();
    let mut identity = Vec::new();
    let mut clothes = Vec::new();
    for _ in 0..n {
        let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        features.push(v.iter().map(|x| x / norm).collect());
        let id = r.random_range(0..3);
        identity.push(id);
        clothes.push(id * 10 + r.random_range(0..2));
    }
    LabeledBatch::new(features, identity, clothes).unwrap()
}

pub fn triplet_matches_enumeration(seed: u64) -> Result<(), String> {
    let b = random_batch(seed);
    let margin = rng(seed ^ 0x5eed).random_range(0.0..1.0);
    let pairs = [
        (
            clothes_aware_triplet_loss(&b, margin).ok(),
            clothes_triplet_naive(b.features(), b.identity(), b.clothes(), margin).ok(),
        ),
        (
            identity_triplet_loss(&b, margin).ok(),
            identity_triplet_naive(b.features(), b.identity(), margin).ok(),
        ),
    ];
    for (fast, naive) in pairs {
        match (fast, naive) {
            (None, None) => {}
            (Some(x), Some(y)) => ensure!((x - y).abs() <= 1e-9, "triplet {x} vs enumeration {y}"),
            _ => return Err(format!("validity differs: {fast:?} vs {naive:?}")),
        }
    }
    Ok(())
}

pub fn triplet_nonnegative_and_zero_iff_inactive(seed: u64) -> Result<(), String> {
    let b = random_batch(seed);
    let margin = rng(seed).random_range(0.0..0.5);
    if let Ok(l) = clothes_aware_triplet_loss(&b, margin) {
        ensure!(l >= 0.0, "negative loss");
        let terms = clothes_aware_triplet_terms(&b, margin);
        let inactive = terms.iter().flatten().all(|&t| t == 0.0);
        ensure!((l == 0.0) == inactive, "loss {l} but inactive = {inactive}");
    }
    Ok(())
}

pub fn triplet_order_invariant(seed: u64) -> Result<(), String> {
    let b = random_batch(seed);
    let mut perm: Vec<usize> = (0..b.len()).collect();
    perm.shuffle(&mut rng(seed + 1));
    let shuffled = LabeledBatch::new(
        perm.iter().map(|&i| b.features()[i].clone()).collect(),
        perm.iter().map(|&i| b.identity()[i]).collect(),
        perm.iter().map(|&i| b.clothes()[i]).collect(),
    )
    .unwrap();
    match (clothes_aware_triplet_loss(&b, 0.3), clothes_aware_triplet_loss(&shuffled, 0.3)) {
        (Ok(x), Ok(y)) => ensure!((x - y).abs() <= 1e-12, "reordering changed loss {x} -> {y}"),
        (Err(_), Err(_)) => {}
        _ => return Err("reordering changed validity".into()),
    }
    Ok(())
}

pub fn variance_unit_nonnegative(seed: u64) -> Result<(), String> {
    let b = small_world(seed);
    let i = rng(seed).random_range(0..b.len());
    match clothes_changing_variance(&b, i) {
        Ok(s) => {
            ensure!(s.iter().all(|&x| x >= 0.0), "negative variance entry");
            let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
            ensure!((norm - 1.0).abs() <= 1e-9, "variance norm {norm}");
        }
        Err(e) => return Err(format!("variance failed: {e}")),
    }
    Ok(())
}

pub fn sampled_loss_deterministic(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let clf = LinearClassifier::new((0..3).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect(), None)
        .unwrap();
    let f: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
    let s: Vec<f64> = (0..4).map(|_| r.random_range(0.0..1.0)).collect();
    let a = sampled_classification_loss(&f, &s, &clf, 1, 5, seed).unwrap();
    let b = sampled_classification_loss(&f, &s, &clf, 1, 5, seed).unwrap();
    ensure!(a == b, "same seed gave {a} and {b}");
    Ok(())
}

pub fn total_loss_linear(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let parts = LossParts {
        l_o: r.random_range(0.0..3.0),
        l_cls: r.random_range(0.0..3.0),
        l_fv: r.random_range(0.0..3.0),
        l_tri: r.random_range(0.0..3.0),
        l_re: r.random_range(0.0..3.0),
    };
    let (a, b, t) = (r.random_range(0.0..2.0), r.random_range(0.0..2.0), r.random_range(0.0..1.0));
    let re = r.random_range(0.0..2.0);
    let mix = total_loss(&parts, t * a + (1.0 - t) * b, re);
    let lin = t * total_loss(&parts, a, re) + (1.0 - t) * total_loss(&parts, b, re);
    ensure!((mix - lin).abs() <= 1e-9, "not linear in alpha_ir");
    let mix = total_loss(&parts, re, t * a + (1.0 - t) * b);
    let lin = t * total_loss(&parts, re, a) + (1.0 - t) * total_loss(&parts, re, b);
    ensure!((mix - lin).abs() <= 1e-9, "not linear in alpha_re");
    Ok(())
}

// --- synthetic world ---

fn ir_distances(b: &EmbeddingBundle) -> DistanceMatrix {
    let (q, g) = (b.query_indices(), b.gallery_indices());
    let vq = DenseVectors::from_bundle(b, FeatureKind::ClothesIrrelevant, &q);
    let vg = DenseVectors::from_bundle(b, FeatureKind::ClothesIrrelevant, &g);
    cosine_distance_matrix(&vq, &vg, q, g).unwrap()
}

pub fn noiseless_ceiling(seed: u64) -> Result<(), String> {
    let c = WorldConfig {
        sigma_ir: 1e-6,
        degrade_fraction: 0.0,
        ..small_config(seed)
    };
    let b = prepare_bundle(&generate_world(&c).unwrap().0).unwrap();
    let r = evaluate(&b, &ir_distances(&b), EvalSetting::ClothesChanging, MaskRules::default()).unwrap();
    ensure!(r.top1 == 1.0, "noiseless f_ir CC top-1 = {}", r.top1);
    Ok(())
}

fn cos32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Mean same-identity and cross-identity f_ir similarity of fully degraded
/// samples in one world.
pub fn degraded_similarity_gap(seed: u64) -> f64 {
    let c = WorldConfig {
        degrade_fraction: 0.5,
        degrade_strength: 1.0,
        ..small_config(seed)
    };
    let (b, truth) = generate_world(&c).unwrap();
    let f = b.matrix(FeatureKind::ClothesIrrelevant);
    let (mut same, mut ns, mut cross, mut nc) = (0.0, 0, 0.0, 0);
    for i in (0..b.len()).filter(|&i| truth.degraded[i]) {
        for j in (0..b.len()).filter(|&j| j != i) {
            let s = cos32(f.row(i), f.row(j));
            if truth.identity[i] == truth.identity[j] {
                same += s;
                ns += 1;
            } else {
                cross += s;
                nc += 1;
            }
        }
    }
    same / ns as f64 - cross / nc as f64
}

pub fn clothes_relevant_clusters(seed: u64) -> Result<(), String> {
    let (b, truth) = generate_world(&small_config(seed)).unwrap();
    let f = b.matrix(FeatureKind::ClothesRelevant);
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0, 0.0, 0);
    for i in 0..b.len() {
        for j in 0..b.len() {
            if i == j || truth.identity[i] != truth.identity[j] {
                continue;
            }
            let s = cos32(f.row(i), f.row(j));
            if truth.clothes[i] == truth.clothes[j] {
                within += s;
                nw += 1;
            } else {
                cross += s;
                nc += 1;
            }
        }
    }
    let (w, c) = (within / nw as f64, cross / nc as f64);
    ensure!(w > c, "within-outfit {w} not above cross-clothes {c}");
    Ok(())
}

// --- evaluation ---

fn random_distances(r: &mut ChaCha8Rng, b: &EmbeddingBundle) -> DistanceMatrix {
    let (q, g) = (b.query_indices(), b.gallery_indices());
    let n = q.len() * g.len();
    DistanceMatrix::new(q, g, (0..n).map(|_| r.random_range(0.0..2.0)).collect()).unwrap()
}

pub fn cmc_monotone_and_complete(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let b = small_world(seed);
    let d = random_distances(&mut r, &b);
    let (lists, rel) = imrank_core::eval::rank_lists(&b, &d, EvalSetting::General, MaskRules::default());
    let longest = lists.iter().map(Vec::len).max().unwrap();
    let ks: Vec<usize> = (1..=longest).collect();
    let cmc = cmc_curve(&lists, &rel, &ks).unwrap();
    let acc: Vec<f64> = cmc.accuracies.iter().map(|&(_, a)| a).collect();
    ensure!(acc.windows(2).all(|w| w[0] <= w[1]), "CMC decreases");
    ensure!(*acc.last().unwrap() == 1.0, "CMC at full gallery = {}", acc.last().unwrap());
    Ok(())
}

pub fn map_relabel_invariant(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let b = small_world(seed);
    let d = random_distances(&mut r, &b);
    let (lists, rel) = imrank_core::eval::rank_lists(&b, &d, EvalSetting::General, MaskRules::default());
    let mut relabel: Vec<usize> = (0..b.len()).collect();
    relabel.shuffle(&mut r);
    let lists2: Vec<Vec<usize>> = lists.iter().map(|l| l.iter().map(|&g| relabel[g]).collect()).collect();
    let rel2: Vec<HashSet<usize>> = rel.iter().map(|s| s.iter().map(|&g| relabel[g]).collect()).collect();
    let (a, c) = (
        mean_average_precision(&lists, &rel).unwrap(),
        mean_average_precision(&lists2, &rel2).unwrap(),
    );
    ensure!(a == c, "mAP changed under relabeling: {a} vs {c}");
    Ok(())
}

pub fn eval_rank_only(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let b = small_world(seed);
    let d = random_distances(&mut r, &b);
    let t = d.map(|x| (3.0 * x).exp() + 1.0);
    for s in EvalSetting::ALL {
        let a = evaluate(&b, &d, s, MaskRules::default()).map_err(|e| e.to_string())?;
        let c = evaluate(&b, &t, s, MaskRules::default()).map_err(|e| e.to_string())?;
        ensure!(a == c, "{s}: report changed under a monotone transform");
    }
    Ok(())
}

pub fn eval_matches_naive(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let b = small_world(seed);
    let d = random_distances(&mut r, &b);
    for s in EvalSetting::ALL {
        for rules in [MaskRules::default(), MaskRules { exclude_same_camera: false }] {
            let fast = evaluate(&b, &d, s, rules).ok();
            let naive = evaluate_naive(&b, &d, s, rules);
            match (fast, naive) {
                (None, None) => {}
                (Some(f), Some(n)) => {
                    ensure!(
                        f.top1 == n.top1 && f.top5 == n.top5 && f.top10 == n.top10,
                        "{s}: CMC differs from scan"
                    );
                    ensure!((f.map - n.map).abs() <= 1e-12, "{s}: mAP {} vs {}", f.map, n.map);
                    ensure!(f.n_queries_evaluated == n.evaluated, "{s}: evaluated counts differ");
                }
                _ => return Err(format!("{s}: evaluability differs")),
            }
        }
    }
    Ok(())
}

/// Every seeded invariant, by name.
pub fn all_checks() -> Vec<(&'static str, Check)> {
    vec![
        ("bundle_round_trip", bundle_round_trip),
        ("normalize_idempotent", normalize_idempotent),
        ("cosine_symmetric", cosine_symmetric),
        ("scaled_similarity_monotone", scaled_similarity_monotone),
        ("thread_count_determinism", thread_count_determinism),
        ("kr_cross_route_symmetry", kr_cross_route_symmetry),
        ("kr_range", kr_range),
        ("jaccard_monotone_overlap", jaccard_monotone_overlap),
        ("kr_degenerate_spaces", kr_degenerate_spaces),
        ("gnn_aggregation_dominates_indicator", gnn_aggregation_dominates_indicator),
        ("gnn_relabel_equivariance", gnn_relabel_equivariance),
        ("gnn_clique_is_minus_one", gnn_clique_is_minus_one),
        ("weights_in_range", weights_in_range),
        ("fusion_monotone", fusion_monotone),
        ("fusion_scale_invariance", fusion_scale_invariance),
        ("zero_reliability_kills_route", zero_reliability_kills_route),
        ("triplet_matches_enumeration", triplet_matches_enumeration),
        ("triplet_nonnegative_and_zero_iff_inactive", triplet_nonnegative_and_zero_iff_inactive),
        ("triplet_order_invariant", triplet_order_invariant),
        ("variance_unit_nonnegative", variance_unit_nonnegative),
        ("sampled_loss_deterministic", sampled_loss_deterministic),
        ("total_loss_linear", total_loss_linear),
        ("noiseless_ceiling", noiseless_ceiling),
        ("clothes_relevant_clusters", clothes_relevant_clusters),
        ("cmc_monotone_and_complete", cmc_monotone_and_complete),
        ("map_relabel_invariant", map_relabel_invariant),
        ("eval_rank_only", eval_rank_only),
        ("eval_matches_naive", eval_matches_naive),
    ]
}

/// Mean sampled loss at `scale * sigma` over `seeds` draws.
pub fn mean_sampled_loss(scale: f64, seeds: u64) -> f64 {
    let clf = LinearClassifier::new(
        vec![vec![2.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 2.0]],
        None,
    )
    .unwrap();
    let f = [0.9, 0.3, 0.1];
    let s = [0.6 * scale, 0.5 * scale, 0.6 * scale];
    (0..seeds)
        .map(|seed| sampled_classification_loss(&f, &s, &clf, 0, 4, seed).unwrap())
        .sum::<f64>()
        / seeds as f64
}
