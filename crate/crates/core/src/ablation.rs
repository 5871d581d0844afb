//! Method ladder (direct, single-space re-rank, fixed-weight and
//! feasibility-weighted intermediary matching) crossed with the availability
//! and reliability stress variants.

use std::fmt;

use serde::Serialize;

use crate::bundle::EmbeddingBundle;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSetting, MaskRules};
use crate::feasibility::{WeightMode, FIXED_WEIGHTS};
use crate::pipeline::{fuse_context, match_routes, reliability_vector, RerankConfig};
use crate::synth::{drop_same_clothes, drop_top_reliability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    SingleSpace,
    ImFixed,
    ImIbfw,
}

impl Method {
    pub const LADDER: [Method; 4] = [Method::Direct, Method::SingleSpace, Method::ImFixed, Method::ImIbfw];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Direct => "direct",
            Method::SingleSpace => "single_space",
            Method::ImFixed => "im_fixed",
            Method::ImIbfw => "im_ibfw",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    DropSameClothes { fraction: f64 },
    DropTopReliability { fraction: f64 },
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Baseline => f.write_str("baseline"),
            Variant::DropSameClothes { fraction } => write!(f, "drop_same_clothes({fraction})"),
            Variant::DropTopReliability { fraction } => write!(f, "drop_top_reliability({fraction})"),
        }
    }
}

impl Variant {
    /// Applies the variant's sample removal. The seed only orders ties.
    pub fn apply(&self, bundle: &EmbeddingBundle, seed: u64) -> EmbeddingBundle {
        match *self {
            Variant::Baseline => bundle.clone(),
            Variant::DropSameClothes { fraction } => drop_same_clothes(bundle, fraction, seed).0,
            Variant::DropTopReliability { fraction } => drop_top_reliability(bundle, fraction, seed).0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationConfig {
    pub rerank: RerankConfig,
    pub variants: Vec<Variant>,
    pub settings: Vec<EvalSetting>,
    pub rules: MaskRules,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            rerank: RerankConfig::default(),
            variants: vec![
                Variant::Baseline,
                Variant::DropSameClothes { fraction: 1.0 },
                Variant::DropTopReliability { fraction: 0.5 },
            ],
            settings: EvalSetting::ALL.to_vec(),
            rules: MaskRules::default(),
            seed: 0,
        }
    }
}

/// One cell group of the table. Metrics are `None` when the setting has no
/// evaluable query under that variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub method: Method,
    pub setting: EvalSetting,
    pub top1: Option<f64>,
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
    pub n_queries_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub config: AblationConfig,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, variant: &Variant, method: Method, setting: EvalSetting) -> Option<&AblationRow> {
        let name = variant.to_string();
        self.rows
            .iter()
            .find(|r| r.variant == name && r.method == method && r.setting == setting)
    }

    pub fn top1(&self, variant: &Variant, method: Method, setting: EvalSetting) -> Option<f64> {
        self.get(variant, method, setting).and_then(|r| r.top1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }

    /// Fixed-width text table, one line per row.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<28} {:<13} {:<8} {:>7} {:>7} {:>6}\n",
            "variant", "method", "setting", "top1", "mAP", "nq"
        );
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.4}", x));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<28} {:<13} {:<8} {:>7} {:>7} {:>6}\n",
                r.variant,
                r.method.to_string(),
                r.setting.to_string(),
                cell(r.top1),
                cell(r.map),
                r.n_queries_evaluated
            ));
        }
        out
    }
}

/// Runs every ladder method on every variant of a normalized bundle.
pub fn run_ablation(bundle: &EmbeddingBundle, cfg: &AblationConfig) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for variant in &cfg.variants {
        let b = variant.apply(bundle, cfg.seed);
        let ctx = match_routes(&b, &cfg.rerank)?;
        let rel = reliability_vector(&b, cfg.rerank.use_reliability);
        let m = cfg.rerank.m_intermediaries;
        let fuse = |w| fuse_context(&ctx, &rel, w, m, cfg.rerank.rescale_direct).map(|o| o.fused);
        let (a, bw, c) = FIXED_WEIGHTS;
        let matrices = [
            (Method::Direct, ctx.routes.d_direct.clone()),
            (Method::SingleSpace, fuse(WeightMode::Fixed(0.0, 0.0, 0.0))?),
            (Method::ImFixed, fuse(WeightMode::Fixed(a, bw, c))?),
            (Method::ImIbfw, fuse(WeightMode::Dynamic)?),
        ];
        for (method, d) in &matrices {
            for &setting in &cfg.settings {
                let row = match evaluate(&b, d, setting, cfg.rules) {
                    Ok(r) => AblationRow {
                        variant: variant.to_string(),
                        method: *method,
                        setting,
                        top1: Some(r.top1),
                        map: Some(r.map),
                        n_queries_evaluated: r.n_queries_evaluated,
                    },
                    Err(Error::NoEvaluableQueries) => AblationRow {
                        variant: variant.to_string(),
                        method: *method,
                        setting,
                        top1: None,
                        map: None,
                        n_queries_evaluated: 0,
                    },
                    Err(e) => return Err(e),
                };
                rows.push(row);
            }
        }
    }
    Ok(AblationTable {
        config: cfg.clone(),
        rows,
    })
}

/// Relative top-1 drop `(base - stressed) / base`; zero when the baseline is zero.
pub fn relative_drop(base: f64, stressed: f64) -> f64 {
    if base <= 0.0 {
        0.0
    } else {
        (base - stressed) / base
    }
}
