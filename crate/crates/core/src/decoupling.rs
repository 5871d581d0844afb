//! Training-side formulas as pure functions: triplet losses, cross-entropy,
//! clothes-changing variance, the sampled classification loss, the
//! feature-variance loss and the reliability score.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bundle::{EmbeddingBundle, FeatureKind, ReliabilityScore};
use crate::distance::dot;
use crate::error::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 0.3;
pub const DEFAULT_LAMBDA_FV: f64 = 1.0;
pub const DEFAULT_ALPHA: f64 = 0.5;

/// A mini-batch of unit features with identity and clothes labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    features: Vec<Vec<f64>>,
    identity: Vec<i32>,
    clothes: Vec<i32>,
}

impl LabeledBatch {
    pub fn new(features: Vec<Vec<f64>>, identity: Vec<i32>, clothes: Vec<i32>) -> Result<Self> {
        let b = features.len();
        if b < 2 {
            return Err(Error::config("batch", format!("needs at least 2 samples, got {b}")));
        }
        for (name, len) in [("identity_labels", identity.len()), ("clothes_labels", clothes.len())] {
            if len != b {
                return Err(Error::DimMismatch {
                    context: name.into(),
                    expected: b,
                    found: len,
                });
            }
        }
        let dim = features[0].len();
        for f in &features {
            if f.len() != dim {
                return Err(Error::DimMismatch {
                    context: "batch features".into(),
                    expected: dim,
                    found: f.len(),
                });
            }
        }
        for i in 0..b {
            if identity[i] < 0 || clothes[i] < 0 {
                return Err(Error::config("labels", format!("sample {i} has a negative label")));
            }
            for j in 0..i {
                if clothes[i] == clothes[j] && identity[i] != identity[j] {
                    return Err(Error::config(
                        "clothes_labels",
                        format!("clothes label {} shared across identities", clothes[i]),
                    ));
                }
            }
        }
        Ok(Self {
            features,
            identity,
            clothes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn identity(&self) -> &[i32] {
        &self.identity
    }

    pub fn clothes(&self) -> &[i32] {
        &self.clothes
    }

    fn dist(&self, a: usize, b: usize) -> f64 {
        1.0 - dot(&self.features[a], &self.features[b]).clamp(-1.0, 1.0)
    }

    /// Batch-hard hinge for one anchor, `None` when either candidate set is empty.
    fn hard_term<P, N>(&self, a: usize, margin: f64, positive: P, negative: N) -> Option<f64>
    where
        P: Fn(usize) -> bool,
        N: Fn(usize) -> bool,
    {
        let mut hardest_pos: Option<f64> = None;
        let mut hardest_neg: Option<f64> = None;
        for j in (0..self.len()).filter(|&j| j != a) {
            let d = self.dist(a, j);
            if positive(j) {
                hardest_pos = Some(hardest_pos.map_or(d, |p| p.max(d)));
            } else if negative(j) {
                hardest_neg = Some(hardest_neg.map_or(d, |n| n.min(d)));
            }
        }
        Some((hardest_pos? - hardest_neg? + margin).max(0.0))
    }

    fn mean_valid(terms: Vec<Option<f64>>) -> Result<f64> {
        let valid: Vec<f64> = terms.into_iter().flatten().collect();
        if valid.is_empty() {
            return Err(Error::NoValidAnchor);
        }
        Ok(valid.iter().sum::<f64>() / valid.len() as f64)
    }
}

/// Per-anchor clothes-aware hinge terms. Positives share identity and
/// clothes with the anchor; negatives share identity but not clothes.
pub fn clothes_aware_triplet_terms(batch: &LabeledBatch, margin: f64) -> Vec<Option<f64>> {
    (0..batch.len())
        .map(|a| {
            let (y, c) = (batch.identity[a], batch.clothes[a]);
            batch.hard_term(
                a,
                margin,
                |j| batch.identity[j] == y && batch.clothes[j] == c,
                |j| batch.identity[j] == y && batch.clothes[j] != c,
            )
        })
        .collect()
}

pub fn clothes_aware_triplet_loss(batch: &LabeledBatch, margin: f64) -> Result<f64> {
    check_margin(margin)?;
    LabeledBatch::mean_valid(clothes_aware_triplet_terms(batch, margin))
}

/// Per-anchor batch-hard hinge terms keyed on identity.
pub fn identity_triplet_terms(batch: &LabeledBatch, margin: f64) -> Vec<Option<f64>> {
    (0..batch.len())
        .map(|a| {
            let y = batch.identity[a];
            batch.hard_term(a, margin, |j| batch.identity[j] == y, |j| batch.identity[j] != y)
        })
        .collect()
}

pub fn identity_triplet_loss(batch: &LabeledBatch, margin: f64) -> Result<f64> {
    check_margin(margin)?;
    LabeledBatch::mean_valid(identity_triplet_terms(batch, margin))
}

fn check_margin(margin: f64) -> Result<()> {
    if margin.is_finite() && margin >= 0.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            field: "margin".into(),
            value: margin,
        })
    }
}

/// Affine classifier `Wx + b` with caller-supplied weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: Vec<Vec<f64>>,
    bias: Option<Vec<f64>>,
}

impl LinearClassifier {
    pub fn new(weights: Vec<Vec<f64>>, bias: Option<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("weights", "classifier needs at least one class"));
        }
        let dim = weights[0].len();
        if let Some(row) = weights.iter().find(|r| r.len() != dim) {
            return Err(Error::DimMismatch {
                context: "classifier weights".into(),
                expected: dim,
                found: row.len(),
            });
        }
        if let Some(b) = &bias {
            if b.len() != weights.len() {
                return Err(Error::DimMismatch {
                    context: "classifier bias".into(),
                    expected: weights.len(),
                    found: b.len(),
                });
            }
        }
        let mut all = weights.iter().flatten().chain(bias.iter().flatten());
        if let Some(&v) = all.find(|v| !v.is_finite()) {
            return Err(Error::OutOfRange {
                field: "classifier".into(),
                value: v,
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                context: "classifier input".into(),
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .enumerate()
            .map(|(c, w)| dot(w, x) + self.bias.as_ref().map_or(0.0, |b| b[c]))
            .collect())
    }
}

/// `-log softmax(Wx + b)[label]`
pub fn cross_entropy_loss(classifier: &LinearClassifier, feature: &[f64], label: usize) -> Result<f64> {
    if label >= classifier.classes() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: classifier.classes(),
        });
    }
    let z = classifier.logits(feature)?;
    Ok(cross_entropy_from_logits(&z, label))
}

fn cross_entropy_from_logits(z: &[f64], label: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|&v| (v - m).exp()).sum();
    ((m - z[label]) + s.ln()).max(0.0)
}

/// Per-sample variance state: direction `sigma_clo` and scale `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceModel {
    sigma_clo: Vec<f64>,
    rho: f64,
}

impl VarianceModel {
    pub fn new(sigma_clo: Vec<f64>, rho: f64) -> Result<Self> {
        if !(rho >= 0.0) {
            return Err(Error::NegativeRho(rho));
        }
        if let Some(&v) = sigma_clo.iter().find(|&&v| !(v >= 0.0)) {
            return Err(Error::OutOfRange {
                field: "sigma_clo".into(),
                value: v,
            });
        }
        let norm = dot(&sigma_clo, &sigma_clo).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::OutOfRange {
                field: "sigma_clo norm".into(),
                value: norm,
            });
        }
        Ok(Self { sigma_clo, rho })
    }

    pub fn sigma_clo(&self) -> &[f64] {
        &self.sigma_clo
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `rho * sigma_clo`
    pub fn sigma_ir(&self) -> Vec<f64> {
        self.sigma_clo.iter().map(|v| v * self.rho).collect()
    }
}

/// Unit direction of cross-clothes variation of sample `i`'s clothes-irrelevant
/// feature: the normalized mean of elementwise squared differences between
/// the mean of `i`'s outfit and every same-identity sample in another outfit.
pub fn clothes_changing_variance(bundle: &EmbeddingBundle, i: usize) -> Result<Vec<f64>> {
    if i >= bundle.len() {
        return Err(Error::OutOfRange {
            field: "sample_id".into(),
            value: i as f64,
        });
    }
    let f = bundle.matrix(FeatureKind::ClothesIrrelevant);
    let dim = f.dim();
    let me = bundle.meta(i);
    let mut mu = vec![0.0; dim];
    let mut outfit = 0usize;
    let mut others = Vec::new();
    for m in bundle.metas().iter().filter(|m| m.identity == me.identity) {
        if m.clothes == me.clothes {
            outfit += 1;
            for (a, &x) in mu.iter_mut().zip(f.row(m.sample_id)) {
                *a += x as f64;
            }
        } else {
            others.push(m.sample_id);
        }
    }
    if others.is_empty() {
        return Err(Error::SingleOutfitIdentity(i));
    }
    mu.iter_mut().for_each(|v| *v /= outfit as f64);
    let mut acc = vec![0.0; dim];
    for &j in &others {
        for ((a, &m), &x) in acc.iter_mut().zip(&mu).zip(f.row(j)) {
            let diff = m - x as f64;
            *a += diff * diff;
        }
    }
    acc.iter_mut().for_each(|v| *v /= others.len() as f64);
    let norm = dot(&acc, &acc).sqrt();
    if norm < 1e-12 {
        return Err(Error::SingleDirection(i));
    }
    Ok(acc.into_iter().map(|v| v / norm).collect())
}

/// Standard-normal perturbations `eps[j][d]`, drawn row by row from a
/// ChaCha20 stream seeded with `seed`.
pub fn sample_perturbations(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

/// `ce(f) + (1/N) sum_j ce(f + eps_j * sigma_ir)`; with `n = 0` only `ce(f)`.
pub fn sampled_classification_loss(
    f_ir: &[f64],
    sigma_ir: &[f64],
    classifier: &LinearClassifier,
    label: usize,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if sigma_ir.len() != f_ir.len() {
        return Err(Error::DimMismatch {
            context: "sigma_ir".into(),
            expected: f_ir.len(),
            found: sigma_ir.len(),
        });
    }
    let base = cross_entropy_loss(classifier, f_ir, label)?;
    if n == 0 {
        return Ok(base);
    }
    let mut sum = 0.0;
    for eps in sample_perturbations(seed, n, f_ir.len()) {
        let z: Vec<f64> = f_ir
            .iter()
            .zip(&eps)
            .zip(sigma_ir)
            .map(|((f, e), s)| f + e * s)
            .collect();
        sum += cross_entropy_loss(classifier, &z, label)?;
    }
    Ok(base + sum / n as f64)
}

/// `max(0, lambda_fv - rho)`
pub fn feature_variance_loss(rho: f64, lambda_fv: f64) -> f64 {
    (lambda_fv - rho).max(0.0)
}

/// `clamp(1 - rho, 0, 1)`
pub fn reliability_from_rho(rho: f64) -> Result<ReliabilityScore> {
    if !(rho >= 0.0) {
        return Err(Error::NegativeRho(rho));
    }
    Ok(ReliabilityScore((1.0 - rho).clamp(0.0, 1.0) as f32))
}

/// Loss terms of one batch. The clothes-irrelevant branch is
/// `l_cls + l_fv + l_tri`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub l_o: f64,
    pub l_cls: f64,
    pub l_fv: f64,
    pub l_tri: f64,
    pub l_re: f64,
}

impl LossParts {
    pub fn l_ir(&self) -> f64 {
        self.l_cls + self.l_fv + self.l_tri
    }
}

pub fn total_loss(parts: &LossParts, alpha_ir: f64, alpha_re: f64) -> f64 {
    parts.l_o + alpha_ir * parts.l_ir() + alpha_re * parts.l_re
}
