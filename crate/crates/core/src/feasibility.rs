//! Feasibility weighting of the intermediary routes and the final fused
//! distance.
//!
//! Each route's score for a (query, gallery) pair averages, over the query's
//! first-hop intermediaries, the product of the first-leg similarity, the
//! second-leg similarity and the intermediary's reliability. The direct terms
//! receive the residual weight `lambda_o = 1 - mean(route scores)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::distance::{scaled_similarity, top_k_row, DistanceMatrix};
use crate::error::{Error, Result};
use crate::routes::{MatchingContext, Mode, Route, RouteDistanceSet};

pub const DEFAULT_M: usize = 10;
/// Grid-searched constant route weights `(s_A, s_B, s_C)`.
pub const FIXED_WEIGHTS: (f64, f64, f64) = (0.3, 0.6, 0.1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopSource {
    /// Prefix of the query's reciprocal set (k-reciprocal mode).
    ReciprocalSet,
    /// Nearest neighbors by the first-leg distance (GNN mode).
    NearestNeighbors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntermediarySet {
    pub query: usize,
    pub route: Route,
    pub members: Vec<usize>,
    pub source: HopSource,
    pub degenerate: bool,
}

/// Up to `m` first-hop intermediaries of the query at position `query_pos`.
pub fn intermediary_set(route: Route, query_pos: usize, ctx: &MatchingContext, m: usize) -> IntermediarySet {
    let q = ctx.queries[query_pos];
    let (members, source) = match ctx.mode {
        Mode::Kr => {
            let list = &ctx.hops.route(route)[query_pos];
            (list[..m.min(list.len())].to_vec(), HopSource::ReciprocalSet)
        }
        Mode::Gnn => {
            let row = match route {
                Route::A => ctx.d_re.row(q),
                Route::B => ctx.d_ir.row(q),
                Route::C => ctx.d_a_query_union.row(query_pos),
            };
            let m = m.min(row.len().saturating_sub(1));
            (
                top_k_row(row, m, Some(q), query_pos).expect("m capped to available"),
                HopSource::NearestNeighbors,
            )
        }
    };
    IntermediarySet {
        query: q,
        route,
        degenerate: members.is_empty(),
        members,
        source,
    }
}

/// Per-pair route scores and the residual direct weight, all `queries x gallery`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityWeights {
    pub s_a: DistanceMatrix,
    pub s_b: DistanceMatrix,
    pub s_c: DistanceMatrix,
    pub lambda_o: DistanceMatrix,
}

impl FeasibilityWeights {
    /// Derives `lambda_o` from the three route scores.
    pub fn from_scores(s_a: DistanceMatrix, s_b: DistanceMatrix, s_c: DistanceMatrix) -> Result<Self> {
        for m in [&s_b, &s_c] {
            if m.shape() != s_a.shape() {
                return Err(Error::ShapeMismatch {
                    context: "feasibility scores",
                    left: s_a.shape(),
                    right: m.shape(),
                });
            }
        }
        let values = s_a
            .values()
            .iter()
            .zip(s_b.values())
            .zip(s_c.values())
            .map(|((a, b), c)| 1.0 - (a + b + c) / 3.0)
            .collect();
        let lambda_o = DistanceMatrix::new(s_a.row_ids().to_vec(), s_a.col_ids().to_vec(), values)?;
        Ok(Self {
            s_a,
            s_b,
            s_c,
            lambda_o,
        })
    }

    pub fn named(&self) -> [(&'static str, &DistanceMatrix); 4] {
        [
            ("s_A", &self.s_a),
            ("s_B", &self.s_b),
            ("s_C", &self.s_c),
            ("lambda_o", &self.lambda_o),
        ]
    }

    pub fn route(&self, route: Route) -> &DistanceMatrix {
        match route {
            Route::A => &self.s_a,
            Route::B => &self.s_b,
            Route::C => &self.s_c,
        }
    }
}

/// Maps a raw route-A distance to `[0, 1]` for the given mode.
pub fn rescale_route(mode: Mode, d: f64) -> f64 {
    match mode {
        Mode::Kr => d,
        Mode::Gnn => (d + 1.0) / 2.0,
    }
}

/// Dynamic feasibility scores. `reliability` is indexed by sample id.
pub fn feasibility_scores(ctx: &MatchingContext, reliability: &[f64], m: usize) -> Result<FeasibilityWeights> {
    if reliability.len() != ctx.d_re.rows() {
        return Err(Error::DimMismatch {
            context: "reliability".into(),
            expected: ctx.d_re.rows(),
            found: reliability.len(),
        });
    }
    let nq = ctx.queries.len();
    let ng = ctx.gallery.len();
    let sim = |d: &DistanceMatrix, a: usize, b: usize| scaled_similarity(1.0 - d.get(a, b));

    let score_route = |route: Route| -> DistanceMatrix {
        let mut values = vec![0.0; nq * ng];
        if ng > 0 {
            values.par_chunks_mut(ng).enumerate().for_each(|(r, out)| {
                let set = intermediary_set(route, r, ctx, m);
                if set.degenerate {
                    return;
                }
                let q = set.query;
                for &i in &set.members {
                    let first = match route {
                        Route::A => sim(&ctx.d_re, q, i),
                        Route::B => sim(&ctx.d_ir, q, i),
                        Route::C => 1.0 - rescale_route(ctx.mode, ctx.d_a_query_union.get(r, i)),
                    };
                    let w = first * reliability[i];
                    if w == 0.0 {
                        continue;
                    }
                    let second = match route {
                        Route::A => ctx.d_ir.row(i),
                        Route::B | Route::C => ctx.d_re.row(i),
                    };
                    for (slot, &t) in out.iter_mut().zip(&ctx.gallery) {
                        *slot += w * scaled_similarity(1.0 - second[t]);
                    }
                }
                let inv = 1.0 / set.members.len() as f64;
                for slot in out.iter_mut() {
                    *slot *= inv;
                }
            });
        }
        DistanceMatrix::new(ctx.queries.clone(), ctx.gallery.clone(), values).expect("shape by construction")
    };

    FeasibilityWeights::from_scores(score_route(Route::A), score_route(Route::B), score_route(Route::C))
}

/// Constant route weights over a `queries x gallery` grid.
pub fn fixed_weight_mode(
    s_a: f64,
    s_b: f64,
    s_c: f64,
    queries: &[usize],
    gallery: &[usize],
) -> Result<FeasibilityWeights> {
    for (field, v) in [("s_A", s_a), ("s_B", s_b), ("s_C", s_c)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange {
                field: field.into(),
                value: v,
            });
        }
    }
    let constant = |v: f64| {
        DistanceMatrix::new(queries.to_vec(), gallery.to_vec(), vec![v; queries.len() * gallery.len()])
            .expect("shape by construction")
    };
    FeasibilityWeights::from_scores(constant(s_a), constant(s_b), constant(s_c))
}

/// Brings every route distance into `[0, 1]` before fusion: GNN routes and
/// `d_o` via `(x + 1) / 2`, and `d_direct` via `x / 2` when `rescale_direct`.
pub fn prepare_for_fusion(routes: &RouteDistanceSet, mode: Mode, rescale_direct: bool) -> RouteDistanceSet {
    let route = |m: &DistanceMatrix| match mode {
        Mode::Kr => m.clone(),
        Mode::Gnn => m.map(|x| (x + 1.0) / 2.0),
    };
    RouteDistanceSet {
        d_a: route(&routes.d_a),
        d_b: route(&routes.d_b),
        d_c: route(&routes.d_c),
        d_o: route(&routes.d_o),
        d_direct: if rescale_direct {
            routes.d_direct.map(|x| x / 2.0)
        } else {
            routes.d_direct.clone()
        },
    }
}

/// `d* = s_A d_A + s_B d_B + s_C d_C + lambda_o (d_direct + d_o)` elementwise.
pub fn fuse_final_distance(routes: &RouteDistanceSet, weights: &FeasibilityWeights) -> Result<DistanceMatrix> {
    routes.check_shapes()?;
    for (_, w) in weights.named() {
        if w.shape() != routes.shape() {
            return Err(Error::ShapeMismatch {
                context: "fusion weights",
                left: routes.shape(),
                right: w.shape(),
            });
        }
    }
    let values = (0..routes.d_a.values().len())
        .into_par_iter()
        .map(|p| {
            let v = |m: &DistanceMatrix| m.values()[p];
            v(&weights.s_a) * v(&routes.d_a)
                + v(&weights.s_b) * v(&routes.d_b)
                + v(&weights.s_c) * v(&routes.d_c)
                + v(&weights.lambda_o) * (v(&routes.d_direct) + v(&routes.d_o))
        })
        .collect();
    DistanceMatrix::new(routes.d_a.row_ids().to_vec(), routes.d_a.col_ids().to_vec(), values)
}

/// How route weights are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    Dynamic,
    Fixed(f64, f64, f64),
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightMode::Dynamic => f.write_str("dynamic"),
            WeightMode::Fixed(a, b, c) => write!(f, "fixed:{a},{b},{c}"),
        }
    }
}

impl FromStr for WeightMode {
    type Err = Error;

    /// `dynamic` or `fixed:a,b,c`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "dynamic" {
            return Ok(WeightMode::Dynamic);
        }
        let bad = || Error::config("weights", format!("expected dynamic or fixed:a,b,c, got {s:?}"));
        let rest = s.strip_prefix("fixed:").ok_or_else(bad)?;
        let parts: Vec<f64> = rest
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        if parts.len() != 3 {
            return Err(bad());
        }
        for (name, v) in ["s_A", "s_B", "s_C"].iter().zip(&parts) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::config("weights", format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(WeightMode::Fixed(parts[0], parts[1], parts[2]))
    }
}
