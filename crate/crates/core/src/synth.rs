//! Synthetic clothes-changing worlds from a hierarchical Gaussian latent
//! model (identity, then outfit, then sample).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bundle::{EmbeddingBundle, FeatureMatrix, ReliabilityScore, Role, SampleMeta};
use crate::error::{Error, Result};

/// Generator knobs. Every field has a default, so a partial key-value file
/// is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_identities: usize,
    pub clothes_per_identity: usize,
    pub samples_per_clothes: usize,
    pub n_cameras: usize,
    pub d_o: usize,
    pub d_ir: usize,
    pub d_re: usize,
    /// Scale of the per-outfit offset relative to the identity latent.
    pub clothes_offset: f64,
    pub sigma_ir: f64,
    pub sigma_re: f64,
    pub sigma_o: f64,
    /// Norm of a direction shared by every sample of a space, which lifts
    /// all pairwise cosines the way non-negative embeddings do.
    pub common_component: f64,
    pub degrade_fraction: f64,
    pub degrade_strength: f64,
    pub drop_same_clothes_fraction: f64,
    /// Fraction of the chosen query outfit's samples that become queries.
    pub query_fraction: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_identities: 50,
            clothes_per_identity: 3,
            samples_per_clothes: 6,
            n_cameras: 4,
            d_o: 64,
            d_ir: 64,
            d_re: 64,
            clothes_offset: 2.0,
            sigma_ir: 0.5,
            sigma_re: 0.3,
            sigma_o: 0.8,
            common_component: 0.6,
            degrade_fraction: 0.0,
            degrade_strength: 0.8,
            drop_same_clothes_fraction: 0.0,
            query_fraction: 0.17,
            seed: 0,
        }
    }
}

impl WorldConfig {
    /// The world used by the ablation acceptance checks.
    pub fn acceptance(seed: u64) -> Self {
        Self {
            degrade_fraction: 0.3,
            degrade_strength: 0.8,
            seed,
            ..Self::default()
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_identities * self.clothes_per_identity * self.samples_per_clothes
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_identities", self.n_identities),
            ("clothes_per_identity", self.clothes_per_identity),
            ("samples_per_clothes", self.samples_per_clothes),
            ("n_cameras", self.n_cameras),
            ("d_o", self.d_o),
            ("d_ir", self.d_ir),
            ("d_re", self.d_re),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.n_samples() < 2 {
            return Err(Error::config("n_identities", "world needs at least 2 samples"));
        }
        if self.n_identities > i32::MAX as usize / self.clothes_per_identity {
            return Err(Error::config("n_identities", "label space overflows i32"));
        }
        let scales = [
            ("clothes_offset", self.clothes_offset),
            ("sigma_ir", self.sigma_ir),
            ("sigma_re", self.sigma_re),
            ("sigma_o", self.sigma_o),
            ("common_component", self.common_component),
        ];
        for (field, v) in scales {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        let fractions = [
            ("degrade_fraction", self.degrade_fraction),
            ("degrade_strength", self.degrade_strength),
            ("drop_same_clothes_fraction", self.drop_same_clothes_fraction),
        ];
        for (field, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, format!("must lie in [0, 1], got {v}")));
            }
        }
        if !(self.query_fraction > 0.0 && self.query_fraction <= 1.0) {
            return Err(Error::config(
                "query_fraction",
                format!("must lie in (0, 1], got {}", self.query_fraction),
            ));
        }
        Ok(())
    }
}

/// Ground truth aligned with the generated bundle's sample ids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldTruth {
    pub identity: Vec<i32>,
    pub clothes: Vec<i32>,
    pub camera: Vec<i32>,
    pub degraded: Vec<bool>,
    pub reliability: Vec<f64>,
}

impl WorldTruth {
    pub fn len(&self) -> usize {
        self.identity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identity.is_empty()
    }

    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            identity: keep.iter().map(|&i| self.identity[i]).collect(),
            clothes: keep.iter().map(|&i| self.clothes[i]).collect(),
            camera: keep.iter().map(|&i| self.camera[i]).collect(),
            degraded: keep.iter().map(|&i| self.degraded[i]).collect(),
            reliability: keep.iter().map(|&i| self.reliability[i]).collect(),
        }
    }
}

// Independent ChaCha streams so that, for example, changing the degrade
// fraction does not reshuffle the split.
const STREAM_LATENT: u64 = 1;
const STREAM_CAMERA: u64 = 2;
const STREAM_DEGRADE: u64 = 3;
const STREAM_SPLIT: u64 = 4;
const STREAM_DROP: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha20Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            scale * z
        })
        .collect()
}

fn normalized_f32(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| (x / norm) as f32).collect()
}

fn axpy(a: f64, x: &[f64], b: f64, y: &[f64], len: usize) -> Vec<f64> {
    (0..len).map(|i| a * x[i] + b * y[i]).collect()
}

/// Generates a world, assigns roles and applies the same-clothes drop.
///
/// Worlds with at least two outfits per identity get a clothes-changing split
/// (one query outfit per identity); single-outfit worlds get a plain split.
pub fn generate_world(config: &WorldConfig) -> Result<(EmbeddingBundle, WorldTruth)> {
    config.validate()?;
    let (bundle, truth) = generate_samples(config)?;
    let bundle = if config.clothes_per_identity >= 2 {
        make_cc_split(&bundle, &truth, config.query_fraction, config.seed)?
    } else {
        plain_split(&bundle, &truth, config.query_fraction, config.seed)
    };
    if config.drop_same_clothes_fraction > 0.0 {
        let (b, keep) = drop_same_clothes(&bundle, config.drop_same_clothes_fraction, config.seed);
        return Ok((b, truth.subset(&keep)));
    }
    Ok((bundle, truth))
}

/// All samples as gallery, ordered identity-major then outfit then sample.
fn generate_samples(config: &WorldConfig) -> Result<(EmbeddingBundle, WorldTruth)> {
    let n = config.n_samples();
    let dim = config.d_o.max(config.d_ir).max(config.d_re);
    let unit = 1.0 / (dim as f64).sqrt();
    let mut latent = stream(config.seed, STREAM_LATENT);
    let mut cameras = stream(config.seed, STREAM_CAMERA);

    let n_degraded = (config.degrade_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(config.seed, STREAM_DEGRADE));
    let mut degraded = vec![false; n];
    for &i in &order[..n_degraded] {
        degraded[i] = true;
    }

    let s = config.degrade_strength;
    let common: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let g = gaussian(&mut latent, dim, 1.0);
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            g.into_iter().map(|x| config.common_component * x / norm).collect()
        })
        .collect();
    let lift = |x: Vec<f64>, which: usize| -> Vec<f32> {
        let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        let y: Vec<f64> = x.iter().zip(&common[which]).map(|(a, b)| a / norm + b).collect();
        normalized_f32(&y)
    };
    let mut metas = Vec::with_capacity(n);
    let mut rows_o = Vec::with_capacity(n);
    let mut rows_ir = Vec::with_capacity(n);
    let mut rows_re = Vec::with_capacity(n);
    let mut truth = WorldTruth {
        identity: Vec::with_capacity(n),
        clothes: Vec::with_capacity(n),
        camera: Vec::with_capacity(n),
        degraded: degraded.clone(),
        reliability: Vec::with_capacity(n),
    };
    for y in 0..config.n_identities {
        let u = gaussian(&mut latent, dim, unit);
        for c in 0..config.clothes_per_identity {
            let offset = gaussian(&mut latent, dim, unit * config.clothes_offset);
            let v = axpy(1.0, &u, 1.0, &offset, dim);
            let mid = axpy(0.5, &u, 0.5, &v, dim);
            let clothes = (y * config.clothes_per_identity + c) as i32;
            for _ in 0..config.samples_per_clothes {
                let id = metas.len();
                let noise_ir = gaussian(&mut latent, dim, unit);
                let noise_re = gaussian(&mut latent, dim, unit);
                let noise_o = gaussian(&mut latent, dim, unit);
                let (f_ir, r) = if degraded[id] {
                    (axpy(1.0 - s, &u, s, &noise_ir, config.d_ir), 1.0 - s)
                } else {
                    (axpy(1.0, &u, config.sigma_ir, &noise_ir, config.d_ir), 1.0)
                };
                rows_ir.push(lift(f_ir, 0));
                rows_re.push(lift(axpy(1.0, &v, config.sigma_re, &noise_re, config.d_re), 1));
                rows_o.push(lift(axpy(1.0, &mid, config.sigma_o, &noise_o, config.d_o), 2));
                let camera = cameras.random_range(0..config.n_cameras) as i32;
                metas.push(SampleMeta {
                    sample_id: id,
                    identity: y as i32,
                    clothes,
                    camera,
                    role: Role::Gallery,
                });
                truth.identity.push(y as i32);
                truth.clothes.push(clothes);
                truth.camera.push(camera);
                truth.reliability.push(r);
            }
        }
    }
    let bundle = EmbeddingBundle::new(
        metas,
        FeatureMatrix::from_rows(config.d_o, &rows_o)?,
        FeatureMatrix::from_rows(config.d_ir, &rows_ir)?,
        FeatureMatrix::from_rows(config.d_re, &rows_re)?,
        truth.reliability.iter().map(|&r| ReliabilityScore(r as f32)).collect(),
    )?;
    Ok((bundle, truth))
}

fn query_count(fraction: f64, size: usize) -> usize {
    ((fraction * size as f64).round() as usize).clamp(1, size)
}

/// Sample ids grouped by identity, then clothes label, in id order.
fn outfits(identity: &[i32], clothes: &[i32]) -> BTreeMap<i32, BTreeMap<i32, Vec<usize>>> {
    let mut out: BTreeMap<i32, BTreeMap<i32, Vec<usize>>> = BTreeMap::new();
    for (i, (&y, &c)) in identity.iter().zip(clothes).enumerate() {
        out.entry(y).or_default().entry(c).or_default().push(i);
    }
    out
}

/// Assigns roles so that every query has a same-identity gallery sample in a
/// different outfit: per identity one outfit is drawn as the query outfit and
/// `round(query_fraction * size)` of its samples become queries.
pub fn make_cc_split(
    bundle: &EmbeddingBundle,
    truth: &WorldTruth,
    query_fraction: f64,
    seed: u64,
) -> Result<EmbeddingBundle> {
    if truth.len() != bundle.len() {
        return Err(Error::DimMismatch {
            context: "world truth".into(),
            expected: bundle.len(),
            found: truth.len(),
        });
    }
    if !(query_fraction > 0.0 && query_fraction <= 1.0) {
        return Err(Error::config("query_fraction", format!("must lie in (0, 1], got {query_fraction}")));
    }
    let groups = outfits(&truth.identity, &truth.clothes);
    if let Some((&y, _)) = groups.iter().find(|(_, o)| o.len() < 2) {
        return Err(Error::InsufficientClothes(y));
    }
    let mut rng = stream(seed, STREAM_SPLIT);
    let mut out = bundle.clone();
    for m in out.metas_mut() {
        m.role = Role::Gallery;
    }
    for by_clothes in groups.values() {
        let pick = rng.random_range(0..by_clothes.len());
        let mut members = by_clothes.values().nth(pick).expect("in range").clone();
        members.shuffle(&mut rng);
        for &i in &members[..query_count(query_fraction, members.len())] {
            out.metas_mut()[i].role = Role::Query;
        }
    }
    Ok(out)
}

/// Per identity, `round(query_fraction * size)` random samples become queries,
/// always leaving at least one gallery sample when the identity has two.
fn plain_split(bundle: &EmbeddingBundle, truth: &WorldTruth, query_fraction: f64, seed: u64) -> EmbeddingBundle {
    let mut by_id: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &y) in truth.identity.iter().enumerate() {
        by_id.entry(y).or_default().push(i);
    }
    let mut rng = stream(seed, STREAM_SPLIT);
    let mut out = bundle.clone();
    for mut members in by_id.into_values() {
        members.shuffle(&mut rng);
        let cap = if members.len() >= 2 { members.len() - 1 } else { 1 };
        for &i in &members[..query_count(query_fraction, members.len()).min(cap)] {
            out.metas_mut()[i].role = Role::Query;
        }
    }
    if out.gallery_indices().is_empty() {
        let last = out.len() - 1;
        out.metas_mut()[last].role = Role::Gallery;
    }
    out
}

/// Removes `fraction` of the gallery samples that share identity and outfit
/// with some query. Returns the reduced bundle and the kept original ids.
pub fn drop_same_clothes(bundle: &EmbeddingBundle, fraction: f64, seed: u64) -> (EmbeddingBundle, Vec<usize>) {
    let query_outfits: std::collections::BTreeSet<i32> = bundle
        .metas()
        .iter()
        .filter(|m| m.role == Role::Query)
        .map(|m| m.clothes)
        .collect();
    let mut mates: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for m in bundle.metas() {
        if m.role == Role::Gallery && query_outfits.contains(&m.clothes) {
            mates.entry(m.clothes).or_default().push(m.sample_id);
        }
    }
    let mut rng = stream(seed, STREAM_DROP);
    let mut dropped = vec![false; bundle.len()];
    for mut group in mates.into_values() {
        group.shuffle(&mut rng);
        let n = (fraction * group.len() as f64).round() as usize;
        for &i in &group[..n] {
            dropped[i] = true;
        }
    }
    let keep: Vec<usize> = (0..bundle.len()).filter(|&i| !dropped[i]).collect();
    (bundle.subset(&keep), keep)
}

/// Removes the `fraction` of gallery samples with the highest reliability.
/// Equal reliabilities are ordered by a seeded shuffle.
pub fn drop_top_reliability(bundle: &EmbeddingBundle, fraction: f64, seed: u64) -> (EmbeddingBundle, Vec<usize>) {
    let mut gallery = bundle.gallery_indices();
    gallery.shuffle(&mut stream(seed, STREAM_DROP));
    // Stable sort keeps the shuffled order among ties.
    gallery.sort_by(|&a, &b| bundle.reliability()[b].0.total_cmp(&bundle.reliability()[a].0));
    let n = (fraction * gallery.len() as f64).round() as usize;
    let mut dropped = vec![false; bundle.len()];
    for &i in &gallery[..n] {
        dropped[i] = true;
    }
    let keep: Vec<usize> = (0..bundle.len()).filter(|&i| !dropped[i]).collect();
    (bundle.subset(&keep), keep)
}
