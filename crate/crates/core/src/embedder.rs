//! Siamese embedding network: a shared base network (in → 128 → 64 → 32),
//! a Euclidean distance layer and the contrastive loss.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::nn::{Activation, Adam, Gradients, Mlp};
use crate::persist::{ModelKind, ModelRecord};
use crate::seeds::{self, streams};
use crate::window::AccelWindow;

pub const EMBEDDING_DIM: usize = 32;
pub const HIDDEN: [usize; 2] = [128, 64];
const ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Relu, Activation::Linear];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderParams {
    pub net: Mlp,
}

impl EmbedderParams {
    pub fn init(input_dim: usize, seed: u64) -> Self {
        let mut rng = seeds::rng(seed, streams::INIT);
        Self { net: Mlp::init(&Self::dims(input_dim), &ACTIVATIONS, &mut rng) }
    }

    pub fn zeros(input_dim: usize) -> Self {
        Self { net: Mlp::zeros(&Self::dims(input_dim), &ACTIVATIONS) }
    }

    fn dims(input_dim: usize) -> [usize; 4] {
        [input_dim, HIDDEN[0], HIDDEN[1], EMBEDDING_DIM]
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn embed(params: &EmbedderParams, features: &[f64]) -> Result<Embedding> {
    params.net.forward(features).map(Embedding)
}

pub fn pair_distance(a: &Embedding, b: &Embedding) -> f64 {
    euclidean(&a.0, &b.0)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

/// `y·d² + (1−y)·max(0, margin − d)²`, with `similar` standing for y = 1.
pub fn contrastive_loss(distance: f64, similar: bool, margin: f64) -> f64 {
    if similar {
        distance * distance
    } else {
        let gap = (margin - distance).max(0.0);
        gap * gap
    }
}

/// Loss of one pair and its gradient with respect to the first embedding
/// (the second embedding's gradient is the negation).
///
/// The similar branch differentiates `d²` directly, so it stays defined at d = 0.
/// The dissimilar branch uses subgradient 0 at the hinge and at d = 0.
pub fn contrastive_grad(ea: &[f64], eb: &[f64], similar: bool, margin: f64) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = ea.iter().zip(eb).map(|(a, b)| a - b).collect();
    let d2: f64 = diff.iter().map(|v| v * v).sum();
    if similar {
        return (d2, diff.iter().map(|v| 2.0 * v).collect());
    }
    let d = d2.sqrt();
    if d >= margin || d == 0.0 {
        let loss = contrastive_loss(d, false, margin);
        return (loss, vec![0.0; diff.len()]);
    }
    let gap = margin - d;
    let k = -2.0 * gap / d;
    (gap * gap, diff.iter().map(|v| k * v).collect())
}

/// Accumulates the gradient of one pair's loss into `grads`; both branches share `params`.
pub fn pair_loss_and_grad(
    params: &EmbedderParams,
    a: &[f64],
    b: &[f64],
    similar: bool,
    margin: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let ta = params.net.forward_traced(a)?;
    let tb = params.net.forward_traced(b)?;
    let (loss, ga) = contrastive_grad(&ta.output, &tb.output, similar, margin);
    let gb: Vec<f64> = ga.iter().map(|v| -v).collect();
    params.net.backward(&ta, &ga, grads);
    params.net.backward(&tb, &gb, grads);
    Ok(loss)
}

/// Indices into a feature matrix plus the similarity label (same activity class).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainPair {
    pub a: usize,
    pub b: usize,
    pub similar: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnnTrainConfig {
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub positives_per_anchor: usize,
    pub negatives_per_anchor: usize,
}

impl Default for SnnTrainConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            epochs: 100,
            batch_size: 64,
            learning_rate: 0.001,
            seed: 0,
            positives_per_anchor: 1,
            negatives_per_anchor: 1,
        }
    }
}

impl SnnTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::config("margin must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Samples, for every anchor, same-class positives and different-class negatives.
/// `epoch` selects an independent deterministic draw.
pub fn make_pairs<S: AsRef<str>>(labels: &[S], config: &SnnTrainConfig, epoch: usize) -> Result<Vec<TrainPair>> {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.as_ref()).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::config("pair generation needs at least two classes"));
    }
    let mut rng = seeds::rng(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), streams::PAIRS);
    let mut pairs = Vec::with_capacity(labels.len() * (config.positives_per_anchor + config.negatives_per_anchor));
    for (i, l) in labels.iter().enumerate() {
        let same = &by_class[l.as_ref()];
        for _ in 0..config.positives_per_anchor {
            // A singleton class pairs with itself.
            let j = if same.len() == 1 {
                i
            } else {
                loop {
                    let j = same[rng.random_range(0..same.len())];
                    if j != i {
                        break j;
                    }
                }
            };
            pairs.push(TrainPair { a: i, b: j, similar: true });
        }
        let others = labels.len() - same.len();
        for _ in 0..config.negatives_per_anchor {
            // Uniform over all samples of other classes.
            let mut k = rng.random_range(0..others);
            let mut chosen = None;
            for (c, members) in &by_class {
                if *c == l.as_ref() {
                    continue;
                }
                if k < members.len() {
                    chosen = Some(members[k]);
                    break;
                }
                k -= members.len();
            }
            let j = chosen.expect("negative index within other classes");
            pairs.push(TrainPair { a: i, b: j, similar: false });
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone)]
pub struct SnnTraining {
    pub params: EmbedderParams,
    /// Mean contrastive loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch Adam on the mean contrastive loss over freshly sampled pairs each epoch.
pub fn train_snn<S: AsRef<str>>(features: &[Vec<f64>], labels: &[S], config: &SnnTrainConfig) -> Result<SnnTraining> {
    config.validate()?;
    if features.len() != labels.len() {
        return Err(Error::Shape { expected: features.len(), actual: labels.len() });
    }
    let dim = features
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::config("no training features"))?;
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::Shape { expected: dim, actual: f.len() });
    }
    let mut params = EmbedderParams::init(dim, config.seed);
    let mut loss_history = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        return Ok(SnnTraining { params, loss_history });
    }
    // Validates class count even when no epoch runs past this point.
    make_pairs(labels, config, 0)?;
    let mut opt = Adam::new(&params.net, config.learning_rate);
    let mut grads = Gradients::zeros_like(&params.net);
    let mut shuffle_rng = seeds::rng(config.seed, streams::SHUFFLE);
    for epoch in 0..config.epochs {
        let mut pairs = make_pairs(labels, config, epoch)?;
        pairs.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in pairs.chunks(config.batch_size) {
            grads.reset();
            let mut batch_loss = 0.0;
            for p in batch {
                batch_loss += pair_loss_and_grad(
                    &params,
                    &features[p.a],
                    &features[p.b],
                    p.similar,
                    config.margin,
                    &mut grads,
                )?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1 });
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut params.net, &grads, &[]);
            total += batch_loss;
        }
        let mean = total / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1 });
        }
        log::debug!("snn epoch {} loss {:.6}", epoch + 1, mean);
        loss_history.push(mean);
    }
    Ok(SnnTraining { params, loss_history })
}

/// A trained embedder bundled with the feature pipeline it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub params: EmbedderParams,
    pub featurizer: Featurizer,
}

impl Embedder {
    /// Fits normalization on `windows`, then trains on their activity tags.
    pub fn train(windows: &[AccelWindow], mut featurizer: Featurizer, config: &SnnTrainConfig) -> Result<(Self, Vec<f64>)> {
        let labels: Vec<&str> = windows
            .iter()
            .map(|w| w.activity.as_deref().unwrap_or(w.label.as_str()))
            .collect();
        let features = featurizer.fit(windows)?;
        let trained = train_snn(&features, &labels, config)?;
        Ok((Self { params: trained.params, featurizer }, trained.loss_history))
    }

    pub fn embed_windows(&self, windows: &[AccelWindow]) -> Result<Vec<Embedding>> {
        if self.featurizer.dim() != self.params.input_dim() {
            return Err(Error::Shape { expected: self.params.input_dim(), actual: self.featurizer.dim() });
        }
        self.featurizer
            .transform_all(windows)?
            .iter()
            .map(|f| embed(&self.params, f))
            .collect()
    }

    pub fn to_record(&self) -> ModelRecord {
        ModelRecord::new(ModelKind::Embedder, &self.params.net, &self.featurizer, None)
    }

    pub fn from_record(record: ModelRecord) -> Result<Self> {
        let (net, featurizer, _) = record.into_parts(ModelKind::Embedder)?;
        Ok(Self { params: EmbedderParams { net }, featurizer })
    }
}
