//! Final-model training on real target plus synthetic source-style images
//! with a frozen head, and the accuracy / forgetting report.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_tensor, DomainDataset, Image};
use crate::error::{Error, Result};
use crate::model::{head_fingerprint, predict_classes, sgd_step, Classifier};
use crate::nn::loss::cross_entropy;
use crate::nn::Sgd;
use crate::stage2::SyntheticSet;

/// Adaptation mode: plain source-free adaptation, or the continual variant
/// that replays synthetic source-style images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Suda,
    Csuda,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Suda => "suda",
            Mode::Csuda => "csuda",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "suda" => Ok(Mode::Suda),
            "csuda" => Ok(Mode::Csuda),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected suda or csuda)"))),
        }
    }
}

/// Real target images with their pseudo-labels plus synthetic images with
/// their conditioning labels.
#[derive(Debug, Clone)]
pub struct MixedTrainingSet<'a> {
    pub target_images: Vec<&'a Image>,
    pub target_labels: Vec<usize>,
    pub synthetic_images: Vec<&'a Image>,
    pub synthetic_labels: Vec<usize>,
    /// Share of each batch drawn from the synthetic part (when non-empty).
    pub synthetic_fraction: f64,
}

impl<'a> MixedTrainingSet<'a> {
    pub fn new(
        target: &'a DomainDataset,
        pseudo_labels: Vec<usize>,
        synthetic: &'a SyntheticSet,
    ) -> Result<Self> {
        if pseudo_labels.len() != target.len() {
            return Err(Error::Shape("one pseudo-label per target sample required".into()));
        }
        Ok(Self {
            target_images: target.images(),
            target_labels: pseudo_labels,
            synthetic_images: synthetic.images.iter().collect(),
            synthetic_labels: synthetic.labels.clone(),
            synthetic_fraction: 0.5,
        })
    }

    fn validate(&self, num_classes: usize) -> Result<()> {
        if self.target_images.is_empty() {
            return Err(Error::EmptyDataset("target part of the mixed set".into()));
        }
        if self.synthetic_images.len() != self.synthetic_labels.len() {
            return Err(Error::Shape("one label per synthetic image required".into()));
        }
        let bad = self
            .target_labels
            .iter()
            .chain(&self.synthetic_labels)
            .find(|&&l| l >= num_classes);
        if let Some(&label) = bad {
            return Err(Error::LabelOutOfRange {
                sample_id: "mixed training set".into(),
                label,
                num_classes,
            });
        }
        if !(0.0..1.0).contains(&self.synthetic_fraction) {
            return Err(Error::Config("synthetic_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub freeze_head: bool,
    pub seed: u64,
}

impl Default for FinalTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            momentum: 0.9,
            freeze_head: true,
            seed: 0,
        }
    }
}

/// Trains a copy of `source` on the mixed set with cross-entropy.
///
/// Each batch takes `synthetic_fraction` of its images from the synthetic
/// part; one epoch is one pass over the larger part, and the smaller part
/// is drawn with replacement. With an empty synthetic part every batch is
/// target-only. The head is left bit-identical when `freeze_head`.
pub fn train_final(
    source: &Classifier,
    data: &MixedTrainingSet<'_>,
    config: &FinalTrainConfig,
    mode: Mode,
) -> Result<Classifier> {
    if mode == Mode::Csuda && !config.freeze_head {
        return Err(Error::Config("the head cannot be unfrozen in csuda mode".into()));
    }
    if mode == Mode::Csuda && data.synthetic_images.is_empty() {
        return Err(Error::EmptyDataset("csuda mode needs synthetic images".into()));
    }
    if config.batch_size < 2 {
        return Err(Error::Config("final batch size must be at least 2".into()));
    }
    data.validate(source.num_classes())?;

    let mut model = source.clone();
    let head_before = head_fingerprint(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Sgd::new(config.learning_rate, config.momentum);

    let use_synth = !data.synthetic_images.is_empty() && data.synthetic_fraction > 0.0;
    let n_syn_per_batch = if use_synth {
        ((config.batch_size as f64 * data.synthetic_fraction).round() as usize).clamp(1, config.batch_size - 1)
    } else {
        0
    };
    let n_tgt_per_batch = config.batch_size - n_syn_per_batch;
    let n_tgt = data.target_images.len();
    let n_syn = data.synthetic_images.len();

    for epoch in 0..config.epochs {
        // The larger part (in batches) is walked in shuffled order; the other is sampled.
        let tgt_batches = n_tgt.div_ceil(n_tgt_per_batch);
        let syn_batches = if use_synth { n_syn.div_ceil(n_syn_per_batch) } else { 0 };
        let batches = tgt_batches.max(syn_batches);
        let mut tgt_order: Vec<usize> = (0..n_tgt).collect();
        tgt_order.shuffle(&mut rng);
        let mut syn_order: Vec<usize> = (0..n_syn).collect();
        syn_order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for b in 0..batches {
            let mut images: Vec<&Image> = Vec::with_capacity(config.batch_size);
            let mut labels = Vec::with_capacity(config.batch_size);
            let pick = |order: &[usize], n: usize, k: usize, walk: bool, rng: &mut ChaCha8Rng| -> Vec<usize> {
                if walk {
                    order[(b * k).min(n)..((b + 1) * k).min(n)].to_vec()
                } else {
                    (0..k).map(|_| rng.random_range(0..n)).collect()
                }
            };
            let walk_tgt = tgt_batches >= syn_batches;
            for i in pick(&tgt_order, n_tgt, n_tgt_per_batch, walk_tgt, &mut rng) {
                images.push(data.target_images[i]);
                labels.push(data.target_labels[i]);
            }
            if use_synth {
                for i in pick(&syn_order, n_syn, n_syn_per_batch, !walk_tgt, &mut rng) {
                    images.push(data.synthetic_images[i]);
                    labels.push(data.synthetic_labels[i]);
                }
            }
            if images.len() < 2 {
                continue;
            }
            let x = batch_tensor::<f32>(&images)?;
            let (loss, _) = sgd_step(&mut model, &mut optimizer, &x, config.freeze_head, |l| {
                cross_entropy(l, &labels)
            });
            loss_sum += loss as f64;
        }
        let mean = loss_sum / batches.max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        log::debug!("final training epoch {epoch}: loss {mean:.4}");
    }
    if config.freeze_head && head_fingerprint(&model) != head_before {
        return Err(Error::FrozenModelModified("classification head changed".into()));
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainAccuracy {
    pub domain: String,
    pub accuracy: f64,
    /// `None` for classes absent from the dataset.
    pub per_class: Vec<Option<f64>>,
}

/// Top-1 accuracy on one labelled dataset.
pub fn domain_accuracy(model: &Classifier, data: &DomainDataset) -> Result<DomainAccuracy> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("{} {}", data.domain, data.split)));
    }
    let preds = predict_classes(model, &data.images())?;
    let mut hits = vec![0usize; data.num_classes];
    let mut counts = vec![0usize; data.num_classes];
    for (p, s) in preds.iter().zip(&data.samples) {
        counts[s.label] += 1;
        if *p == s.label {
            hits[s.label] += 1;
        }
    }
    Ok(DomainAccuracy {
        domain: data.domain.clone(),
        accuracy: hits.iter().sum::<usize>() as f64 / data.len() as f64,
        per_class: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean over target domains.
    pub target_accuracy: f64,
    /// Mean over source domains.
    pub source_accuracy: f64,
    /// Source model on the same source test sets, if known.
    pub source_accuracy_baseline: Option<f64>,
    /// `baseline - source_accuracy`; `None` without a baseline. May be negative.
    pub forgetting: Option<f64>,
    pub targets: Vec<DomainAccuracy>,
    pub sources: Vec<DomainAccuracy>,
}

/// Evaluates a model on source and target test sets.
pub fn evaluate(
    model: &Classifier,
    sources: &[&DomainDataset],
    targets: &[&DomainDataset],
    source_baseline: Option<f64>,
) -> Result<EvalReport> {
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::EmptyDataset("evaluation needs source and target test sets".into()));
    }
    let sources: Vec<DomainAccuracy> = sources.iter().map(|d| domain_accuracy(model, d)).collect::<Result<_>>()?;
    let targets: Vec<DomainAccuracy> = targets.iter().map(|d| domain_accuracy(model, d)).collect::<Result<_>>()?;
    let mean = |v: &[DomainAccuracy]| v.iter().map(|d| d.accuracy).sum::<f64>() / v.len() as f64;
    let source_accuracy = mean(&sources);
    Ok(EvalReport {
        target_accuracy: mean(&targets),
        source_accuracy,
        source_accuracy_baseline: source_baseline,
        forgetting: source_baseline.map(|b| b - source_accuracy),
        targets,
        sources,
    })
}

impl EvalReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::path(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Training-data settings compared in the accuracy table.
pub const TABLE_COLUMNS: [&str; 4] = ["Sc", "Tg", "Tg+SynSc", "Tg+Sc"];

/// Target and source accuracy of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScore {
    pub target: f64,
    pub source: f64,
}

impl From<&EvalReport> for ColumnScore {
    fn from(r: &EvalReport) -> Self {
        Self {
            target: r.target_accuracy,
            source: r.source_accuracy,
        }
    }
}

/// One adaptation task (e.g. `photo→sketch`) across the table columns:
/// source model, target-only final model, target + synthetic source, and
/// the optional target + real source oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub task: String,
    pub columns: [Option<ColumnScore>; 4],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub rows: Vec<TableRow>,
}

impl AccuracyTable {
    /// Fixed-width text: one target line and one source line per task.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.task.len() + 4).max().unwrap_or(8).max(12);
        let mut out = format!("{:<width$}", "task");
        for c in TABLE_COLUMNS {
            let _ = write!(out, " {c:>9}");
        }
        out.push('\n');
        let cell = |v: Option<f64>| v.map_or_else(|| format!("{:>9}", "-"), |v| format!("{:>9.1}", 100.0 * v));
        for row in &self.rows {
            for (suffix, pick) in [(" Tg", 0usize), (" Sc*", 1)] {
                let _ = write!(out, "{:<width$}", format!("{}{suffix}", row.task));
                for col in &row.columns {
                    let v = col.map(|s| if pick == 0 { s.target } else { s.source });
                    let _ = write!(out, " {}", cell(v));
                }
                out.push('\n');
            }
        }
        out
    }

    /// CSV with columns `task, metric, Sc, Tg, Tg+SynSc, Tg+Sc` (accuracies in [0, 1]).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec!["task", "metric"];
        header.extend(TABLE_COLUMNS);
        w.write_record(&header)?;
        for row in &self.rows {
            for (metric, pick) in [("target", 0usize), ("source", 1)] {
                let mut rec = vec![row.task.clone(), metric.to_string()];
                for col in &row.columns {
                    rec.push(
                        col.map(|s| format!("{:.6}", if pick == 0 { s.target } else { s.source }))
                            .unwrap_or_default(),
                    );
                }
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(Error::Io)
    }
}
