//! Feedforward fall detector (engineered features → 32 → 16 → sigmoid) and the
//! three retraining strategies: from scratch, transfer with the first hidden
//! layer frozen, and few-shot fine-tuning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVariant, Featurizer};
use crate::nn::{Activation, Adam, Gradients, Mlp};
use crate::persist::{ModelKind, ModelRecord};
use crate::seeds::{self, streams};
use crate::selector::window_gradient;
use crate::window::{AccelWindow, Dataset, FeedbackSample, Label, WINDOW_LEN};

pub const DETECTOR_HIDDEN: [usize; 2] = [32, 16];
pub const DEFAULT_THRESHOLD: f64 = 0.5;
const ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Relu, Activation::Linear];

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub alert: bool,
}

/// Anything that can decide whether a window raises a fall alert.
pub trait FallAlarm {
    fn alerts(&self, windows: &[AccelWindow]) -> Result<Vec<bool>>;
}

impl<F: Fn(&AccelWindow) -> bool> FallAlarm for F {
    fn alerts(&self, windows: &[AccelWindow]) -> Result<Vec<bool>> {
        Ok(windows.iter().map(self).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub featurizer: Featurizer,
    /// Outputs a single logit; the probability is its sigmoid.
    pub net: Mlp,
    pub threshold: f64,
}

impl DetectorModel {
    fn dims(input: usize) -> [usize; 4] {
        [input, DETECTOR_HIDDEN[0], DETECTOR_HIDDEN[1], 1]
    }

    pub fn init(featurizer: Featurizer, seed: u64) -> Self {
        let mut rng = seeds::rng(seed, streams::INIT);
        let net = Mlp::init(&Self::dims(featurizer.dim()), &ACTIVATIONS, &mut rng);
        Self { featurizer, net, threshold: DEFAULT_THRESHOLD }
    }

    pub fn zeros(featurizer: Featurizer) -> Self {
        let net = Mlp::zeros(&Self::dims(featurizer.dim()), &ACTIVATIONS);
        Self { featurizer, net, threshold: DEFAULT_THRESHOLD }
    }

    pub fn default_featurizer() -> Featurizer {
        Featurizer::new(FeatureVariant::SimilarityAndStats, WINDOW_LEN)
    }

    fn logit(&self, features: &[f64]) -> Result<f64> {
        Ok(self.net.forward(features)?[0])
    }

    fn prediction(&self, logit: f64) -> Prediction {
        let probability = sigmoid(logit);
        Prediction { probability, alert: probability >= self.threshold }
    }

    pub fn predict(&self, window: &AccelWindow) -> Result<Prediction> {
        let f = self.featurizer.transform(window)?;
        Ok(self.prediction(self.logit(&f)?))
    }

    pub fn predict_all(&self, windows: &[AccelWindow]) -> Result<Vec<Prediction>> {
        self.featurizer
            .transform_all(windows)?
            .iter()
            .map(|f| Ok(self.prediction(self.logit(f)?)))
            .collect()
    }

    pub fn to_record(&self) -> ModelRecord {
        ModelRecord::new(ModelKind::Detector, &self.net, &self.featurizer, Some(self.threshold))
    }

    pub fn from_record(record: ModelRecord) -> Result<Self> {
        let (net, featurizer, threshold) = record.into_parts(ModelKind::Detector)?;
        if net.output_dim() != 1 {
            return Err(Error::Shape { expected: 1, actual: net.output_dim() });
        }
        Ok(Self { featurizer, net, threshold: threshold.unwrap_or(DEFAULT_THRESHOLD) })
    }
}

impl FallAlarm for DetectorModel {
    fn alerts(&self, windows: &[AccelWindow]) -> Result<Vec<bool>> {
        Ok(self.predict_all(windows)?.into_iter().map(|p| p.alert).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Weight each class by `N / (2·N_class)` in the loss.
    pub class_weighting: bool,
    /// Indices of layers whose parameters are never updated.
    pub frozen_layers: Vec<usize>,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 0.001,
            seed: 0,
            class_weighting: true,
            frozen_layers: Vec::new(),
        }
    }
}

impl DetectorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }

    fn frozen_mask(&self, layers: usize) -> Vec<bool> {
        (0..layers).map(|l| self.frozen_layers.contains(&l)).collect()
    }
}

/// Weighted binary cross-entropy on one sample; accumulates parameter gradients.
pub fn bce_loss_and_grad(net: &Mlp, x: &[f64], target: f64, weight: f64, grads: &mut Gradients) -> Result<f64> {
    let trace = net.forward_traced(x)?;
    let z = trace.output[0];
    let loss = weight * (softplus(z) - target * z);
    net.backward(&trace, &[weight * (sigmoid(z) - target)], grads);
    Ok(loss)
}

pub fn class_weights(targets: &[f64], enabled: bool) -> Vec<f64> {
    let n = targets.len() as f64;
    let pos = targets.iter().filter(|&&t| t > 0.5).count() as f64;
    let neg = n - pos;
    if !enabled || pos == 0.0 || neg == 0.0 {
        return vec![1.0; targets.len()];
    }
    let (wp, wn) = (n / (2.0 * pos), n / (2.0 * neg));
    log::debug!("class weights: fall {wp:.4}, adl {wn:.4}");
    targets.iter().map(|&t| if t > 0.5 { wp } else { wn }).collect()
}

/// Mini-batch Adam on weighted BCE. Returns the mean loss per epoch.
fn fit(net: &mut Mlp, features: &[Vec<f64>], targets: &[f64], config: &DetectorTrainConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let weights = class_weights(targets, config.class_weighting);
    let frozen = config.frozen_mask(net.layers.len());
    let mut opt = Adam::new(net, config.learning_rate);
    let mut grads = Gradients::zeros_like(net);
    let mut rng = seeds::rng(config.seed, streams::SHUFFLE);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.reset();
            for &i in batch {
                total += bce_loss_and_grad(net, &features[i], targets[i], weights[i], &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(net, &grads, &frozen);
        }
        let mean = total / features.len().max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1 });
        }
        history.push(mean);
    }
    Ok(history)
}

fn targets_of(windows: &[AccelWindow]) -> Vec<f64> {
    windows.iter().map(|w| w.label.target()).collect()
}

fn require_both_classes(windows: &[AccelWindow]) -> Result<()> {
    let falls = windows.iter().filter(|w| w.label == Label::Fall).count();
    if falls == 0 || falls == windows.len() {
        return Err(Error::config("training data must contain both fall and ADL windows"));
    }
    Ok(())
}

/// Fresh initialization trained on all of `data`; normalization is refitted on it.
pub fn train_tfs(data: &Dataset, config: &DetectorTrainConfig) -> Result<DetectorModel> {
    config.validate()?;
    require_both_classes(data.windows())?;
    let mut featurizer = DetectorModel::default_featurizer();
    let features = featurizer.fit(data.windows())?;
    let mut model = DetectorModel::init(featurizer, config.seed);
    let cfg = DetectorTrainConfig { frozen_layers: config.frozen_layers.clone(), ..config.clone() };
    fit(&mut model.net, &features, &targets_of(data.windows()), &cfg)?;
    Ok(model)
}

fn fine_tune(base: &DetectorModel, windows: &[AccelWindow], config: &DetectorTrainConfig) -> Result<DetectorModel> {
    let mut model = base.clone();
    if config.epochs == 0 || windows.is_empty() {
        return Ok(model);
    }
    let features = model.featurizer.transform_all(windows)?;
    let mut cfg = config.clone();
    if !cfg.frozen_layers.contains(&0) {
        cfg.frozen_layers.push(0);
    }
    fit(&mut model.net, &features, &targets_of(windows), &cfg)?;
    Ok(model)
}

/// Starts from `base`, keeps its normalization and first hidden layer, and
/// fine-tunes the upper layers on `data`.
pub fn train_tl(base: &DetectorModel, data: &Dataset, config: &DetectorTrainConfig) -> Result<DetectorModel> {
    config.validate()?;
    require_both_classes(data.windows())?;
    fine_tune(base, data.windows(), config)
}

fn top_by_gradient(candidates: Vec<&AccelWindow>, shots: usize) -> Result<Vec<AccelWindow>> {
    let mut scored = candidates
        .into_iter()
        .enumerate()
        .map(|(i, w)| Ok((window_gradient(w)?, i, w)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(shots).map(|(_, _, w)| w.clone()).collect())
}

/// The few-shot training set: up to `shots_per_class` highest-gradient windows
/// per class from `feedback`, labeled by verdict. A class missing from the
/// feedback is filled from `fallback`.
pub fn fsl_shots(feedback: &[FeedbackSample], fallback: &Dataset, shots_per_class: usize) -> Result<Vec<AccelWindow>> {
    let mut out = Vec::new();
    for label in [Label::Fall, Label::Adl] {
        let from_feedback: Vec<&AccelWindow> = feedback
            .iter()
            .filter(|f| f.verdict.label() == label)
            .map(|f| &f.window)
            .collect();
        let picked = if from_feedback.is_empty() {
            let base: Vec<&AccelWindow> = fallback.windows().iter().filter(|w| w.label == label).collect();
            log::warn!(
                "few-shot: no {} feedback; using {} base-dataset windows instead",
                label.as_str(),
                base.len().min(shots_per_class)
            );
            top_by_gradient(base, shots_per_class)?
        } else {
            top_by_gradient(from_feedback, shots_per_class)?
        };
        out.extend(picked.into_iter().map(|mut w| {
            w.label = label;
            w
        }));
    }
    Ok(out)
}

/// Few-shot fine-tuning of the upper layers of `base` on a small per-class budget.
pub fn train_fsl(
    base: &DetectorModel,
    feedback: &[FeedbackSample],
    fallback: &Dataset,
    config: &DetectorTrainConfig,
    shots_per_class: usize,
) -> Result<DetectorModel> {
    config.validate()?;
    if shots_per_class == 0 {
        return Ok(base.clone());
    }
    let shots = fsl_shots(feedback, fallback, shots_per_class)?;
    if shots.is_empty() {
        return Err(Error::config("few-shot training found no samples for either class"));
    }
    fine_tune(base, &shots, config)
}
