//! Matching, weighting and fusion composed into one re-ranking run.

use serde::Serialize;

use crate::bundle::{normalize_bundle, validate_bundle, EmbeddingBundle};
use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::feasibility::{
    feasibility_scores, fixed_weight_mode, fuse_final_distance, prepare_for_fusion, FeasibilityWeights,
    WeightMode, DEFAULT_M,
};
use crate::gnn::match_gnn;
use crate::kreciprocal::{match_kr, KrOptions, DEFAULT_K};
use crate::routes::{MatchingContext, Mode, RouteDistanceSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RerankConfig {
    pub mode: Mode,
    pub k: usize,
    pub m_intermediaries: usize,
    #[serde(serialize_with = "as_display")]
    pub weights: WeightMode,
    /// Halve `d_direct` so it shares the `[0, 1]` range of the other terms.
    pub rescale_direct: bool,
    /// When false every reliability is treated as 1.
    pub use_reliability: bool,
    /// Half-k reciprocal-set expansion (k-reciprocal mode only).
    pub expand: bool,
}

fn as_display<S: serde::Serializer>(w: &WeightMode, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(w)
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Kr,
            k: DEFAULT_K,
            m_intermediaries: DEFAULT_M,
            weights: WeightMode::Dynamic,
            rescale_direct: true,
            use_reliability: true,
            expand: false,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be positive"));
        }
        if self.k >= n {
            return Err(Error::config("k", format!("k = {} must be below the sample count {n}", self.k)));
        }
        if self.m_intermediaries == 0 {
            return Err(Error::config("m_intermediaries", "must be positive"));
        }
        if self.expand && self.mode == Mode::Gnn {
            return Err(Error::config("expand", "only applies to kr mode"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RerankOutput {
    /// Raw route distances (GNN routes in `[-1, 1]`, `d_direct` in `[0, 2]`).
    pub routes: RouteDistanceSet,
    pub weights: FeasibilityWeights,
    pub fused: DistanceMatrix,
}

impl RerankOutput {
    /// All matrices by artifact name, in a fixed order.
    pub fn named(&self) -> Vec<(&'static str, &DistanceMatrix)> {
        let mut out: Vec<_> = self.routes.named().into_iter().collect();
        out.extend(self.weights.named());
        out.push(("d_star", &self.fused));
        out
    }
}

/// Normalizes and validates a bundle before matching.
pub fn prepare_bundle(bundle: &EmbeddingBundle) -> Result<EmbeddingBundle> {
    validate_structure(bundle)?;
    let b = normalize_bundle(bundle)?;
    validate_bundle(&b).into_result()?;
    Ok(b)
}

fn validate_structure(bundle: &EmbeddingBundle) -> Result<()> {
    let report = validate_bundle(bundle);
    let hard: Vec<_> = report
        .violations
        .into_iter()
        .filter(|v| v.kind != crate::bundle::ViolationKind::NotUnitNorm)
        .collect();
    if hard.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidBundle(hard))
    }
}

/// Runs the matching back end selected by `cfg.mode` on a normalized bundle.
pub fn match_routes(bundle: &EmbeddingBundle, cfg: &RerankConfig) -> Result<MatchingContext> {
    cfg.validate(bundle.len())?;
    match cfg.mode {
        Mode::Kr => match_kr(
            bundle,
            KrOptions {
                k: cfg.k,
                expand: cfg.expand,
            },
        ),
        Mode::Gnn => match_gnn(bundle, cfg.k),
    }
}

pub fn reliability_vector(bundle: &EmbeddingBundle, use_reliability: bool) -> Vec<f64> {
    if use_reliability {
        bundle.reliability().iter().map(|r| r.value()).collect()
    } else {
        vec![1.0; bundle.len()]
    }
}

/// Weighting and fusion on top of an existing matching context.
pub fn fuse_context(
    ctx: &MatchingContext,
    reliability: &[f64],
    weights: WeightMode,
    m: usize,
    rescale_direct: bool,
) -> Result<RerankOutput> {
    let weights = match weights {
        WeightMode::Dynamic => feasibility_scores(ctx, reliability, m)?,
        WeightMode::Fixed(a, b, c) => fixed_weight_mode(a, b, c, &ctx.queries, &ctx.gallery)?,
    };
    let prepared = prepare_for_fusion(&ctx.routes, ctx.mode, rescale_direct);
    let fused = fuse_final_distance(&prepared, &weights)?;
    Ok(RerankOutput {
        routes: ctx.routes.clone(),
        weights,
        fused,
    })
}

/// Full re-ranking of a normalized bundle.
pub fn rerank(bundle: &EmbeddingBundle, cfg: &RerankConfig) -> Result<RerankOutput> {
    let ctx = match_routes(bundle, cfg)?;
    fuse_context(
        &ctx,
        &reliability_vector(bundle, cfg.use_reliability),
        cfg.weights,
        cfg.m_intermediaries,
        cfg.rescale_direct,
    )
}
