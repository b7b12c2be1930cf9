//! Multi-instance multi-label concept prediction.
//!
//! A proposal is a bag of `K` evenly spaced segments; each segment gets
//! per-concept probabilities from a linear-sigmoid model and the proposal's
//! prediction is their element-wise max. Training minimises binary cross
//! entropy of the pooled prediction with mini-batch gradient descent; the
//! gradient of the max flows through the first argmax segment only.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{encode_with_header, read_bytes, save_json, split_header, write_bytes};
use crate::model::{segment_range, SegmentGrid, TimeInterval, VideoMeta};

pub const LOGIT_CLAMP: f64 = 30.0;
pub const PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_K_SEGMENTS: usize = 20;
const MODEL_MAGIC: &[u8; 4] = b"DVCM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ConceptVocabulary {
    concepts: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl ConceptVocabulary {
    pub fn new(concepts: Vec<String>) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut lookup = HashMap::with_capacity(concepts.len());
        for (i, c) in concepts.iter().enumerate() {
            if lookup.insert(c.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate concept {c:?}")));
            }
        }
        Ok(Self { concepts, lookup })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn index_of(&self, concept: &str) -> Option<usize> {
        self.lookup.get(concept).copied()
    }

    pub fn concept(&self, index: usize) -> &str {
        &self.concepts[index]
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    /// Multi-hot label vector of the concepts present in `tokens`.
    pub fn labels_for<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<bool> {
        let mut labels = vec![false; self.len()];
        for t in tokens {
            if let Some(i) = self.index_of(t.as_ref()) {
                labels[i] = true;
            }
        }
        labels
    }
}

impl TryFrom<Vec<String>> for ConceptVocabulary {
    type Error = Error;

    fn try_from(value: Vec<String>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ConceptVocabulary> for Vec<String> {
    fn from(value: ConceptVocabulary) -> Self {
        value.concepts
    }
}

/// Frequent lexicon words: those with `count >= min_count`, most frequent
/// first, ties in lexicographic order.
pub fn build_vocabulary(
    counts: &BTreeMap<String, u64>,
    lexicon: &HashSet<String>,
    min_count: u64,
) -> Result<ConceptVocabulary> {
    let mut kept: Vec<(&String, u64)> = counts
        .iter()
        .filter(|(w, &c)| c >= min_count && lexicon.contains(*w))
        .map(|(w, &c)| (w, c))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ConceptVocabulary::new(kept.into_iter().map(|(w, _)| w.clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConceptModel {
    vocabulary: ConceptVocabulary,
    dim: usize,
    /// `C x D`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LinearConceptModel {
    pub fn zeros(vocabulary: ConceptVocabulary, dim: usize) -> Self {
        let c = vocabulary.len();
        Self {
            vocabulary,
            dim,
            weights: vec![0.0; c * dim],
            bias: vec![0.0; c],
        }
    }

    pub fn from_parts(
        vocabulary: ConceptVocabulary,
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let c = vocabulary.len();
        if weights.len() != c * dim {
            return Err(Error::DimensionMismatch {
                expected: c * dim,
                actual: weights.len(),
            });
        }
        if bias.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                actual: bias.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("model parameters must be finite".into()));
        }
        Ok(Self {
            vocabulary,
            dim,
            weights,
            bias,
        })
    }

    pub fn vocabulary(&self) -> &ConceptVocabulary {
        &self.vocabulary
    }

    pub fn concept_count(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Clamped logits `W·x + b`.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self
            .weights
            .chunks_exact(self.dim.max(1))
            .take(self.bias.len())
            .zip(&self.bias)
            .map(|(w, b)| {
                let z = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
                z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
            })
            .collect())
    }
}

/// Per-concept probabilities for one segment feature vector.
pub fn predict_segment(model: &LinearConceptModel, feature: &[f64]) -> Result<Vec<f64>> {
    Ok(model.logits(feature)?.into_iter().map(sigmoid).collect())
}

/// `k` segment indices spread evenly over the proposal's segment range:
/// `round(linspace(first, last, k))`, repeating indices when the range is
/// shorter than `k`.
pub fn select_even_segments(proposal: &TimeInterval, meta: &VideoMeta, k: usize) -> Vec<usize> {
    let range = segment_range(proposal, meta);
    let first = range.start as f64;
    let last = (range.end - 1) as f64;
    match k {
        0 => Vec::new(),
        1 => vec![range.start],
        _ => (0..k)
            .map(|m| (first + m as f64 * (last - first) / (k - 1) as f64).round() as usize)
            .collect(),
    }
}

/// Element-wise max of segment predictions over the `k` selected segments.
pub fn predict_proposal(
    model: &LinearConceptModel,
    grid: &SegmentGrid,
    proposal: &TimeInterval,
    k: usize,
) -> Result<Vec<f64>> {
    let features = grid.require_features()?;
    let mut pooled = vec![0.0f64; model.concept_count()];
    for idx in select_even_segments(proposal, &grid.meta, k.max(1)) {
        let probs = predict_segment(model, features.row(idx))?;
        for (p, q) in pooled.iter_mut().zip(probs) {
            *p = p.max(q);
        }
    }
    Ok(pooled)
}

/// Mean binary cross entropy over concepts, with probabilities clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(probs: &[f64], labels: &[bool]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / probs.len() as f64
}

/// A proposal to learn from: its interval, the grid it lives on, and its
/// multi-hot concept labels.
#[derive(Debug, Clone)]
pub struct MimlExample<'a> {
    pub proposal: TimeInterval,
    pub grid: &'a SegmentGrid,
    pub labels: Vec<bool>,
}

/// Gathered instances of a proposal, ready for optimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceBag {
    pub instances: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl MimlExample<'_> {
    pub fn to_bag(&self, k: usize) -> Result<InstanceBag> {
        let features = self.grid.require_features()?;
        Ok(InstanceBag {
            instances: select_even_segments(&self.proposal, &self.grid.meta, k.max(1))
                .into_iter()
                .map(|i| features.row(i).to_vec())
                .collect(),
            labels: self.labels.clone(),
        })
    }
}

/// Gradient of the objective with respect to the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean proposal-level BCE over `bags` and its (sub)gradient.
pub fn objective_and_gradient(model: &LinearConceptModel, bags: &[InstanceBag]) -> Result<(f64, Gradient)> {
    let c = model.concept_count();
    let d = model.dim;
    let mut grad = Gradient {
        weights: vec![0.0; c * d],
        bias: vec![0.0; c],
    };
    if bags.is_empty() {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for bag in bags {
        if bag.labels.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                actual: bag.labels.len(),
            });
        }
        if bag.instances.is_empty() {
            return Err(Error::Empty("bag without instances".into()));
        }
        let mut raw = Vec::with_capacity(bag.instances.len());
        for x in &bag.instances {
            model.check_dim(x)?;
            raw.push(
                model
                    .weights
                    .chunks_exact(d.max(1))
                    .take(c)
                    .zip(&model.bias)
                    .map(|(w, b)| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b)
                    .collect::<Vec<f64>>(),
            );
        }
        let mut probs = vec![0.0; c];
        for concept in 0..c {
            let mut best = 0usize;
            for k in 1..raw.len() {
                if raw[k][concept].clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
                    > raw[best][concept].clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
                {
                    best = k;
                }
            }
            let z = raw[best][concept];
            let p = sigmoid(z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP));
            probs[concept] = p;
            let saturated = z.abs() > LOGIT_CLAMP || !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
            if saturated {
                continue;
            }
            let y = if bag.labels[concept] { 1.0 } else { 0.0 };
            let dz = (p - y) / c as f64;
            grad.bias[concept] += dz;
            let row = &mut grad.weights[concept * d..(concept + 1) * d];
            for (g, &x) in row.iter_mut().zip(&bag.instances[best]) {
                *g += dz * x;
            }
        }
        loss += bce_loss(&probs, &bag.labels);
    }
    let n = bags.len() as f64;
    grad.weights.iter_mut().for_each(|g| *g /= n);
    grad.bias.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Objective only; used for loss traces and finite-difference checks.
pub fn objective(model: &LinearConceptModel, bags: &[InstanceBag]) -> Result<f64> {
    let mut total = 0.0;
    for bag in bags {
        let mut pooled = vec![0.0f64; model.concept_count()];
        for x in &bag.instances {
            for (p, q) in pooled.iter_mut().zip(predict_segment(model, x)?) {
                *p = p.max(q);
            }
        }
        total += bce_loss(&pooled, &bag.labels);
    }
    Ok(if bags.is_empty() { 0.0 } else { total / bags.len() as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub k_segments: usize,
    pub seed: u64,
    pub weight_init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 100,
            batch_size: 32,
            k_segments: DEFAULT_K_SEGMENTS,
            seed: 0,
            weight_init_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("learning rate must be non-negative".into()));
        }
        if self.k_segments < 1 {
            return Err(Error::InvalidConfig("k_segments must be ≥ 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch size must be ≥ 1".into()));
        }
        if !(self.weight_init_scale.is_finite() && self.weight_init_scale >= 0.0) {
            return Err(Error::InvalidConfig("weight init scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Gaussian weights scaled by `weight_init_scale`, zero bias.
pub fn init_model(vocabulary: ConceptVocabulary, dim: usize, cfg: &TrainConfig) -> LinearConceptModel {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_with_rng(vocabulary, dim, cfg, &mut rng)
}

fn init_with_rng(
    vocabulary: ConceptVocabulary,
    dim: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> LinearConceptModel {
    let mut model = LinearConceptModel::zeros(vocabulary, dim);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for w in &mut model.weights {
        *w = normal.sample(rng) * cfg.weight_init_scale;
    }
    model
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: LinearConceptModel,
    /// Full-data objective after each epoch.
    pub loss_trace: Vec<f64>,
}

pub fn train(
    examples: &[MimlExample<'_>],
    vocabulary: ConceptVocabulary,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let bags = examples
        .iter()
        .map(|e| e.to_bag(cfg.k_segments))
        .collect::<Result<Vec<_>>>()?;
    train_bags(&bags, vocabulary, cfg)
}

/// Training on pre-gathered bags.
pub fn train_bags(bags: &[InstanceBag], vocabulary: ConceptVocabulary, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim = bags
        .first()
        .and_then(|b| b.instances.first())
        .map(Vec::len)
        .ok_or_else(|| Error::Empty("training examples".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = init_with_rng(vocabulary, dim, cfg, &mut rng);
    let mut order: Vec<usize> = (0..bags.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| bags[i].clone()));
            let (_, grad) = objective_and_gradient(&model, &batch)?;
            for (w, g) in model.weights.iter_mut().zip(&grad.weights) {
                *w -= cfg.learning_rate * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
                *b -= cfg.learning_rate * g;
            }
        }
        let loss = objective(&model, bags)?;
        if !loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        log::debug!("epoch {epoch}: loss {loss:.6}");
        loss_trace.push(loss);
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Fraction of (proposal, concept) decisions correct at threshold 0.5.
pub fn label_accuracy(model: &LinearConceptModel, bags: &[InstanceBag]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for bag in bags {
        let mut pooled = vec![0.0f64; model.concept_count()];
        for x in &bag.instances {
            for (p, q) in pooled.iter_mut().zip(predict_segment(model, x)?) {
                *p = p.max(q);
            }
        }
        for (p, &y) in pooled.iter().zip(&bag.labels) {
            correct += usize::from((*p >= 0.5) == y);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Segment-level targets: every segment inside a proposal inherits its
/// labels; overlapping proposals are OR-ed; uncovered segments stay zero.
pub fn assign_segment_labels(
    proposals: &[(TimeInterval, Vec<bool>)],
    meta: &VideoMeta,
    concept_count: usize,
) -> Result<Vec<Vec<bool>>> {
    let mut out = vec![vec![false; concept_count]; meta.segment_count()];
    for (interval, labels) in proposals {
        if labels.len() != concept_count {
            return Err(Error::DimensionMismatch {
                expected: concept_count,
                actual: labels.len(),
            });
        }
        for seg in segment_range(interval, meta) {
            for (o, &l) in out[seg].iter_mut().zip(labels) {
                *o |= l;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// model files
//
// Binary: `DVCM`, u32 LE header length, JSON header {"C", "D", "vocabulary"},
// then W (C*D) and b (C) as f64 LE. Text: JSON with the same header keys plus
// "W" (rows) and "b".

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    #[serde(rename = "C")]
    concepts: usize,
    #[serde(rename = "D")]
    dim: usize,
    vocabulary: ConceptVocabulary,
}

#[derive(Serialize, Deserialize)]
struct ModelText {
    #[serde(rename = "C")]
    concepts: usize,
    #[serde(rename = "D")]
    dim: usize,
    vocabulary: ConceptVocabulary,
    #[serde(rename = "W")]
    weights: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelLayout {
    Binary,
    Text,
}

pub fn save_model(model: &LinearConceptModel, path: impl AsRef<Path>, layout: ModelLayout) -> Result<()> {
    let path = path.as_ref();
    match layout {
        ModelLayout::Binary => {
            let header = serde_json::to_vec(&ModelHeader {
                concepts: model.concept_count(),
                dim: model.dim,
                vocabulary: model.vocabulary.clone(),
            })
            .expect("header serializes");
            let n = model.weights.len() + model.bias.len();
            let mut out = encode_with_header(MODEL_MAGIC, &header, n * 8);
            for v in model.weights.iter().chain(&model.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            write_bytes(path, &out)
        }
        ModelLayout::Text => save_json(
            &ModelText {
                concepts: model.concept_count(),
                dim: model.dim,
                vocabulary: model.vocabulary.clone(),
                weights: model
                    .weights
                    .chunks(model.dim.max(1))
                    .map(<[f64]>::to_vec)
                    .collect(),
                b: model.bias.clone(),
            },
            path,
        ),
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LinearConceptModel> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let parse_err = |source| Error::Parse {
        path: path.to_path_buf(),
        source,
    };
    if bytes.starts_with(MODEL_MAGIC) {
        let (header, body) = split_header(path, &bytes)?;
        let header: ModelHeader = serde_json::from_slice(header).map_err(parse_err)?;
        check_header(path, header.concepts, header.dim, &header.vocabulary)?;
        let n = header.concepts * header.dim + header.concepts;
        if body.len() != n * 8 {
            return Err(Error::format(
                path,
                format!("expected {} payload bytes, found {}", n * 8, body.len()),
            ));
        }
        let mut values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let bias = values.split_off(header.concepts * header.dim);
        LinearConceptModel::from_parts(header.vocabulary, header.dim, values, bias)
    } else {
        let text: ModelText = serde_json::from_slice(&bytes).map_err(parse_err)?;
        check_header(path, text.concepts, text.dim, &text.vocabulary)?;
        if text.weights.len() != text.concepts || text.weights.iter().any(|r| r.len() != text.dim) {
            return Err(Error::format(path, "W does not match C x D"));
        }
        LinearConceptModel::from_parts(
            text.vocabulary,
            text.dim,
            text.weights.into_iter().flatten().collect(),
            text.b,
        )
    }
}

fn check_header(path: &Path, concepts: usize, _dim: usize, vocabulary: &ConceptVocabulary) -> Result<()> {
    if vocabulary.len() != concepts {
        return Err(Error::format(
            path,
            format!("header says C = {concepts} but vocabulary has {}", vocabulary.len()),
        ));
    }
    Ok(())
}
