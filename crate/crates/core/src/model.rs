//! Classifier-level operations shared by every pipeline stage: supervised
//! training, evaluation-mode prediction and BatchNorm statistic access.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{batch_tensor, DomainDataset, Image};
use crate::error::{Error, Result};
use crate::nn::loss::{argmax, cross_entropy, softmax_rows};
use crate::nn::{FeatureMap, ParamGroup, Scalar, Sgd, ToyNet, ToyNetConfig};

/// The single-precision classifier used throughout the pipeline.
pub type Classifier = ToyNet<f32>;

const EVAL_CHUNK: usize = 128;

/// Builds a freshly initialised classifier from a seed.
pub fn init_classifier(config: ToyNetConfig, seed: u64) -> Classifier {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ToyNet::new(config, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    /// Running training accuracy per epoch.
    pub epoch_accuracy: Vec<f64>,
}

/// Channel-wise running statistics of every BN layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStatProfile {
    pub layers: Vec<BnLayerStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnLayerStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStatProfile {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Checks layer count and per-layer channel counts against a model.
    pub fn check_matches<T: Scalar>(&self, model: &ToyNet<T>) -> Result<()> {
        if self.layers.len() != model.bn_layer_count() {
            return Err(Error::Shape(format!(
                "profile has {} BN layers, model has {}",
                self.layers.len(),
                model.bn_layer_count()
            )));
        }
        for (i, (layer, block)) in self.layers.iter().zip(&model.blocks).enumerate() {
            let c = block.bn.channels();
            if layer.mean.len() != c || layer.var.len() != c {
                return Err(Error::Shape(format!(
                    "BN layer {i}: profile has {} channels, model has {c}",
                    layer.mean.len()
                )));
            }
        }
        Ok(())
    }
}

/// Copies the running BN statistics out of the model.
pub fn extract_bn_profile<T: Scalar>(model: &ToyNet<T>) -> Result<BnStatProfile> {
    if model.bn_layer_count() == 0 {
        return Err(Error::UnsupportedArchitecture(format!(
            "{} has no BatchNorm layers",
            model.config().architecture_id()
        )));
    }
    let layers = model
        .blocks
        .iter()
        .map(|b| BnLayerStats {
            mean: b.bn.running_mean.iter().map(|v| v.as_f64()).collect(),
            var: b.bn.running_var.iter().map(|v| v.as_f64()).collect(),
        })
        .collect();
    Ok(BnStatProfile { layers })
}

/// SHA-256 over every parameter and buffer, name included.
pub fn fingerprint<T: Scalar>(model: &ToyNet<T>) -> String {
    fingerprint_filtered(model, |_| true)
}

/// Fingerprint restricted to the tensors whose name passes `keep`.
pub fn fingerprint_filtered<T: Scalar>(model: &ToyNet<T>, keep: impl Fn(&str) -> bool) -> String {
    let mut hasher = Sha256::new();
    for t in model.named_tensors() {
        if !keep(&t.name) {
            continue;
        }
        hasher.update(t.name.as_bytes());
        for v in t.data {
            hasher.update(v.as_f64().to_le_bytes());
        }
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Head-only fingerprint, used for the frozen-classifier contract.
pub fn head_fingerprint<T: Scalar>(model: &ToyNet<T>) -> String {
    fingerprint_filtered(model, |name| name.starts_with("head."))
}

fn check_images<T: Scalar>(model: &ToyNet<T>, images: &[&Image]) -> Result<()> {
    for im in images {
        let (c, h, w) = im.shape();
        model.check_input(c, h, w).map_err(Error::Shape)?;
    }
    Ok(())
}

/// Evaluation-mode logits, shape `(images.len(), C)`.
pub fn predict_logits(model: &Classifier, images: &[&Image]) -> Result<Array2<f32>> {
    check_images(model, images)?;
    let mut out = Array2::zeros((images.len(), model.num_classes()));
    for (chunk_idx, chunk) in images.chunks(EVAL_CHUNK).enumerate() {
        let x = batch_tensor::<f32>(chunk)?;
        let logits = model.logits_eval(&x);
        let start = chunk_idx * EVAL_CHUNK;
        out.slice_mut(ndarray::s![start..start + chunk.len(), ..])
            .assign(&logits);
    }
    Ok(out)
}

pub fn predict_probabilities(model: &Classifier, images: &[&Image]) -> Result<Array2<f32>> {
    Ok(softmax_rows(&predict_logits(model, images)?))
}

pub fn predict_classes(model: &Classifier, images: &[&Image]) -> Result<Vec<usize>> {
    let logits = predict_logits(model, images)?;
    Ok(logits.rows().into_iter().map(|r| argmax(r.iter().copied())).collect())
}

/// Top-1 accuracy against the dataset's ground-truth labels.
pub fn accuracy(model: &Classifier, data: &DomainDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("{} {}", data.domain, data.split)));
    }
    let preds = predict_classes(model, &data.images())?;
    let correct = preds
        .iter()
        .zip(&data.samples)
        .filter(|(p, s)| **p == s.label)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// One SGD step on a training-mode forward pass. `loss_fn` maps logits to
/// `(loss, dloss/dlogits)`. Head parameters are skipped when `freeze_head`.
pub(crate) fn sgd_step(
    model: &mut Classifier,
    optimizer: &mut Sgd<f32>,
    x: &FeatureMap<f32>,
    freeze_head: bool,
    loss_fn: impl FnOnce(&Array2<f32>) -> (f32, Array2<f32>),
) -> (f32, Array2<f32>) {
    let (logits, trace) = model.forward_train(x);
    let (loss, dlogits) = loss_fn(&logits);
    let (grads, _) = model.backward(&trace, &dlogits, None, false);
    let keep = |g: ParamGroup| !(freeze_head && g == ParamGroup::Head);
    let grad_slices: Vec<&[f32]> = grads
        .slices()
        .into_iter()
        .filter(|(g, _)| keep(*g))
        .map(|(_, s)| s)
        .collect();
    let params: Vec<&mut [f32]> = model
        .params_mut()
        .into_iter()
        .filter(|(g, _)| keep(*g))
        .map(|(_, s)| s)
        .collect();
    optimizer.step(params, grad_slices);
    (loss, logits)
}

/// Cross-entropy training with SGD + momentum on a labelled dataset.
pub fn train_supervised(
    model: &mut Classifier,
    data: &DomainDataset,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("{} {}", data.domain, data.split)));
    }
    if data.num_classes != model.num_classes() {
        return Err(Error::ClassMismatch {
            model: model.num_classes(),
            expected: data.num_classes,
        });
    }
    if let Some(s) = data.samples.iter().find(|s| s.label >= model.num_classes()) {
        return Err(Error::LabelOutOfRange {
            sample_id: s.id.clone(),
            label: s.label,
            num_classes: model.num_classes(),
        });
    }
    check_images(model, &data.images())?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Sgd::new(config.learning_rate, config.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let images: Vec<&Image> = batch.iter().map(|&i| &data.samples[i].image).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data.samples[i].label).collect();
            let x = batch_tensor::<f32>(&images)?;
            let (loss, logits) =
                sgd_step(model, &mut optimizer, &x, false, |l| cross_entropy(l, &labels));
            loss_sum += loss as f64 * batch.len() as f64;
            correct += logits
                .rows()
                .into_iter()
                .zip(&labels)
                .filter(|(r, &y)| argmax(r.iter().copied()) == y)
                .count();
        }
        let mean_loss = loss_sum / data.len() as f64;
        log::debug!("supervised epoch {epoch}: loss {mean_loss:.4}");
        history.epoch_loss.push(mean_loss);
        history.epoch_accuracy.push(correct as f64 / data.len() as f64);
    }
    Ok(history)
}
