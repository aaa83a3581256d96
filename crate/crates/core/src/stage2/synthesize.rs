use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{synthesis_objective, LossParts, Weights};
use crate::data::{DomainDataset, Image};
use crate::error::{Error, Result};
use crate::model::{extract_bn_profile, fingerprint, predict_classes, BnStatProfile, Classifier};
use crate::nn::{cosine_annealing, Adam, FeatureMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthesisInit {
    /// Start from the selected target images.
    Prior,
    /// Start from uniform noise in `[0, 1]`.
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub lambda_tv: f64,
    pub lambda_bn: f64,
    /// Initial Adam step size, annealed with a cosine schedule.
    pub learning_rate: f64,
    pub steps: usize,
    pub init: SynthesisInit,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            lambda_tv: 1e-4,
            lambda_bn: 1e-2,
            learning_rate: 0.1,
            steps: 10_000,
            init: SynthesisInit::Prior,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_tv >= 0.0 && self.lambda_bn >= 0.0) {
            return Err(Error::Config("synthesis weights must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("synthesis learning rate must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("synthesis needs at least one step".into()));
        }
        Ok(())
    }

    fn weights(&self) -> Weights {
        Weights {
            ce: 1.0,
            tv: self.lambda_tv,
            bn: self.lambda_bn,
        }
    }
}

/// Synthesised images for one conditioning class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisBatch {
    pub label: usize,
    pub images: Vec<Image>,
    /// Target samples the images were initialised from (also recorded for
    /// noise initialisation, where they only fix the batch size).
    pub prior_ids: Vec<String>,
    /// Objective before each update; one entry per executed step.
    pub loss_trace: Vec<LossParts>,
    /// Objective after the last update.
    pub final_loss: LossParts,
}

impl SynthesisBatch {
    pub fn target_labels(&self) -> Vec<usize> {
        vec![self.label; self.images.len()]
    }

    pub fn initial_loss(&self) -> Option<LossParts> {
        self.loss_trace.first().copied()
    }
}

/// Optimises one batch of images towards `label`.
pub fn synthesize_batch(
    model: &Classifier,
    profile: &BnStatProfile,
    label: usize,
    init_images: &[&Image],
    prior_ids: Vec<String>,
    config: &SynthesisConfig,
) -> Result<SynthesisBatch> {
    config.validate()?;
    if init_images.is_empty() {
        return Err(Error::EmptyClass {
            class: label,
            name: format!("class {label}"),
        });
    }
    if label >= model.num_classes() {
        return Err(Error::LabelOutOfRange {
            sample_id: prior_ids.first().cloned().unwrap_or_default(),
            label,
            num_classes: model.num_classes(),
        });
    }
    let (c, h, w) = init_images[0].shape();
    model.check_input(c, h, w).map_err(Error::Shape)?;
    let chw: Vec<&[f32]> = init_images.iter().map(|i| i.data.as_slice()).collect();
    let mut x = FeatureMap::<f32>::from_chw(&chw, c, h, w);
    let labels = vec![label; init_images.len()];
    let weights = config.weights();

    let mut adam = Adam::<f32>::new(x.data.len(), 0.9, 0.999, 1e-8);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (parts, grad) = synthesis_objective(model, &x, &labels, profile, weights)?;
        if !parts.is_finite() {
            return Err(Error::NonFiniteSynthesis {
                step,
                ce: parts.ce,
                tv: parts.tv,
                bn: parts.bn,
            });
        }
        trace.push(parts);
        let lr = cosine_annealing(config.learning_rate, step, config.steps) as f32;
        adam.step(
            x.data.as_slice_mut().expect("standard layout"),
            grad.data.as_slice().expect("standard layout"),
            lr,
        );
        x.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
    let (final_loss, _) = synthesis_objective(model, &x, &labels, profile, weights)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteSynthesis {
            step: config.steps,
            ce: final_loss.ce,
            tv: final_loss.tv,
            bn: final_loss.bn,
        });
    }
    let images = (0..x.batch)
        .map(|n| Image::new(c, h, w, x.image_chw(n)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthesisBatch {
        label,
        images,
        prior_ids,
        loss_trace: trace,
        final_loss,
    })
}

/// Synthesises one batch per class from the per-class prior ids (as
/// returned by `select_confident_priors`). The source model is verified
/// to be bit-identical afterwards.
pub fn synthesize(
    source: &Classifier,
    target: &DomainDataset,
    priors: &[Vec<String>],
    config: &SynthesisConfig,
) -> Result<Vec<SynthesisBatch>> {
    config.validate()?;
    if priors.len() != source.num_classes() {
        return Err(Error::ClassMismatch {
            model: source.num_classes(),
            expected: priors.len(),
        });
    }
    let profile = extract_bn_profile(source)?;
    let before = fingerprint(source);
    let by_id: HashMap<&str, &Image> = target.samples.iter().map(|s| (s.id.as_str(), &s.image)).collect();

    let mut batches = Vec::with_capacity(priors.len());
    for (label, ids) in priors.iter().enumerate() {
        if ids.is_empty() {
            return Err(Error::EmptyClass {
                class: label,
                name: target.class_names.get(label).cloned().unwrap_or_default(),
            });
        }
        let prior_images: Vec<&Image> = ids
            .iter()
            .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| Error::UnknownSample(id.clone())))
            .collect::<Result<_>>()?;
        let init: Vec<Image> = match config.init {
            SynthesisInit::Prior => prior_images.iter().map(|&i| i.clone()).collect(),
            SynthesisInit::Noise => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(label as u64);
                prior_images
                    .iter()
                    .map(|i| {
                        let (c, h, w) = i.shape();
                        let data = (0..c * h * w).map(|_| rng.random::<f32>()).collect();
                        Image::new(c, h, w, data)
                    })
                    .collect::<Result<_>>()?
            }
        };
        let init_refs: Vec<&Image> = init.iter().collect();
        log::info!("synthesising class {label} from {} priors", ids.len());
        batches.push(synthesize_batch(source, &profile, label, &init_refs, ids.clone(), config)?);
    }
    if fingerprint(source) != before {
        return Err(Error::FrozenModelModified("source model changed during synthesis".into()));
    }
    Ok(batches)
}

/// Fraction of each batch the model assigns to the batch's label.
pub fn batch_fidelity(model: &Classifier, batch: &SynthesisBatch) -> Result<f64> {
    let refs: Vec<&Image> = batch.images.iter().collect();
    let preds = predict_classes(model, &refs)?;
    Ok(preds.iter().filter(|&&p| p == batch.label).count() as f64 / preds.len() as f64)
}
