//! Retrieval evaluation under the general, same-clothes and clothes-changing
//! protocols: gallery masking, CMC and mAP.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{EmbeddingBundle, SampleMeta};
use crate::distance::{argsort_row, DistanceMatrix};
use crate::error::{Error, Result};

pub const CMC_RANKS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSetting {
    General,
    SameClothes,
    ClothesChanging,
}

impl EvalSetting {
    pub const ALL: [EvalSetting; 3] = [
        EvalSetting::General,
        EvalSetting::SameClothes,
        EvalSetting::ClothesChanging,
    ];

    pub fn short(self) -> &'static str {
        match self {
            EvalSetting::General => "general",
            EvalSetting::SameClothes => "sc",
            EvalSetting::ClothesChanging => "cc",
        }
    }
}

impl fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for EvalSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(EvalSetting::General),
            "sc" | "same_clothes" => Ok(EvalSetting::SameClothes),
            "cc" | "clothes_changing" => Ok(EvalSetting::ClothesChanging),
            other => Err(Error::config("setting", format!("expected general, sc or cc, got {other:?}"))),
        }
    }
}

/// Toggleable masking rules shared by all settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MaskRules {
    /// Drop same-identity gallery samples taken by the query's camera.
    pub exclude_same_camera: bool,
}

impl Default for MaskRules {
    fn default() -> Self {
        Self {
            exclude_same_camera: true,
        }
    }
}

/// `true` for gallery samples kept for query `q`. Cross-identity samples are
/// always kept.
pub fn gallery_mask(q: &SampleMeta, gallery: &[SampleMeta], setting: EvalSetting, rules: MaskRules) -> Vec<bool> {
    gallery
        .iter()
        .map(|g| {
            if g.identity != q.identity {
                return true;
            }
            if rules.exclude_same_camera && g.camera == q.camera {
                return false;
            }
            match setting {
                EvalSetting::General => true,
                EvalSetting::SameClothes => g.clothes == q.clothes,
                EvalSetting::ClothesChanging => g.clothes != q.clothes,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CmcCurve {
    /// `(k, accuracy)` pairs in the order requested.
    pub accuracies: Vec<(usize, f64)>,
    pub evaluated: usize,
    pub dropped: usize,
}

impl CmcCurve {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.accuracies.iter().find(|(kk, _)| *kk == k).map(|&(_, a)| a)
    }
}

fn evaluable<'a>(
    rank_lists: &'a [Vec<usize>],
    relevance: &'a [HashSet<usize>],
) -> impl Iterator<Item = (&'a Vec<usize>, &'a HashSet<usize>)> {
    rank_lists
        .iter()
        .zip(relevance)
        .filter(|(list, pos)| list.iter().any(|g| pos.contains(g)))
}

/// Fraction of queries with a positive in their first `k` results, for each
/// `k` in `ks`. Queries whose list holds no positive are dropped.
pub fn cmc_curve(rank_lists: &[Vec<usize>], relevance: &[HashSet<usize>], ks: &[usize]) -> Result<CmcCurve> {
    let first_hits: Vec<usize> = evaluable(rank_lists, relevance)
        .map(|(list, pos)| list.iter().position(|g| pos.contains(g)).expect("has positive"))
        .collect();
    if first_hits.is_empty() {
        return Err(Error::NoEvaluableQueries);
    }
    let n = first_hits.len() as f64;
    let accuracies = ks
        .iter()
        .map(|&k| (k, first_hits.iter().filter(|&&r| r < k).count() as f64 / n))
        .collect();
    Ok(CmcCurve {
        accuracies,
        evaluated: first_hits.len(),
        dropped: rank_lists.len() - first_hits.len(),
    })
}

/// AP of one ranked list: mean over positives of (hits so far / rank).
pub fn average_precision(list: &[usize], positives: &HashSet<usize>) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, g) in list.iter().enumerate() {
        if positives.contains(g) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn mean_average_precision(rank_lists: &[Vec<usize>], relevance: &[HashSet<usize>]) -> Result<f64> {
    let aps: Vec<f64> = evaluable(rank_lists, relevance)
        .map(|(list, pos)| average_precision(list, pos))
        .collect();
    if aps.is_empty() {
        return Err(Error::NoEvaluableQueries);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub setting: EvalSetting,
    pub top1: f64,
    pub top5: f64,
    pub top10: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub n_queries_evaluated: usize,
    pub n_queries_dropped: usize,
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    /// Stable, diffable text form.
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Masked rank lists and positive sets (gallery sample ids) per query.
pub fn rank_lists(
    bundle: &EmbeddingBundle,
    d: &DistanceMatrix,
    setting: EvalSetting,
    rules: MaskRules,
) -> (Vec<Vec<usize>>, Vec<HashSet<usize>>) {
    let gallery_meta: Vec<SampleMeta> = d.col_ids().iter().map(|&g| *bundle.meta(g)).collect();
    (0..d.rows())
        .into_par_iter()
        .map(|r| {
            let q = bundle.meta(d.row_ids()[r]);
            let keep = gallery_mask(q, &gallery_meta, setting, rules);
            let list: Vec<usize> = argsort_row(d.row(r))
                .into_iter()
                .filter(|&c| keep[c])
                .map(|c| d.col_ids()[c])
                .collect();
            let pos = list
                .iter()
                .copied()
                .filter(|&g| bundle.meta(g).identity == q.identity)
                .collect();
            (list, pos)
        })
        .unzip()
}

/// Ranks every query's gallery by ascending distance (ties by gallery
/// position) under `setting` and computes CMC at 1/5/10 and mAP.
pub fn evaluate(
    bundle: &EmbeddingBundle,
    d: &DistanceMatrix,
    setting: EvalSetting,
    rules: MaskRules,
) -> Result<EvalReport> {
    let (lists, rel) = rank_lists(bundle, d, setting, rules);
    let cmc = cmc_curve(&lists, &rel, &CMC_RANKS)?;
    let map = mean_average_precision(&lists, &rel)?;
    Ok(EvalReport {
        setting,
        top1: cmc.at(1).unwrap_or(0.0),
        top5: cmc.at(5).unwrap_or(0.0),
        top10: cmc.at(10).unwrap_or(0.0),
        map,
        n_queries_evaluated: cmc.evaluated,
        n_queries_dropped: cmc.dropped,
        config: BTreeMap::new(),
    })
}
