//! Pseudo-labels for an unlabelled target domain: inference with the source
//! model, self-entropy confidence and per-class prior selection.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::model::{predict_logits, Classifier};
use crate::nn::loss::{argmax, softmax};

/// Default number of low-entropy priors kept per class.
pub const DEFAULT_PRIORS_PER_CLASS: usize = 32;

const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Inferred,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub sample_id: String,
    pub pseudo_label: usize,
    /// Probability assigned to `pseudo_label` by the model that produced it.
    pub confidence: f64,
    pub self_entropy: f64,
    pub source: LabelSource,
}

impl PseudoLabelRecord {
    /// Builds a record from a probability vector, labelling it with `label`.
    pub fn from_probabilities(
        sample_id: impl Into<String>,
        label: usize,
        probs: &[f64],
        source: LabelSource,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if label >= probs.len() {
            return Err(Error::LabelOutOfRange {
                sample_id,
                label,
                num_classes: probs.len(),
            });
        }
        Ok(Self {
            confidence: probs[label],
            self_entropy: self_entropy(probs)?,
            sample_id,
            pseudo_label: label,
            source,
        })
    }
}

/// One record per target sample, kept in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    num_classes: usize,
    records: Vec<PseudoLabelRecord>,
    index: HashMap<String, usize>,
}

impl PseudoLabelSet {
    pub fn new(num_classes: usize, records: Vec<PseudoLabelRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        let max_entropy = (num_classes as f64).ln() + SIMPLEX_TOL;
        for (i, r) in records.iter().enumerate() {
            if r.pseudo_label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    sample_id: r.sample_id.clone(),
                    label: r.pseudo_label,
                    num_classes,
                });
            }
            if !(0.0..=1.0).contains(&r.confidence) {
                return Err(Error::InvalidDistribution(format!(
                    "sample {}: confidence {} outside [0, 1]",
                    r.sample_id, r.confidence
                )));
            }
            if !(0.0..=max_entropy).contains(&r.self_entropy) {
                return Err(Error::InvalidDistribution(format!(
                    "sample {}: self-entropy {} outside [0, ln {num_classes}]",
                    r.sample_id, r.self_entropy
                )));
            }
            if index.insert(r.sample_id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate pseudo-label for {}", r.sample_id)));
            }
        }
        Ok(Self {
            num_classes,
            records,
            index,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PseudoLabelRecord] {
        &self.records
    }

    pub fn get(&self, sample_id: &str) -> Option<&PseudoLabelRecord> {
        self.index.get(sample_id).map(|&i| &self.records[i])
    }

    pub fn label_of(&self, sample_id: &str) -> Result<usize> {
        self.get(sample_id)
            .map(|r| r.pseudo_label)
            .ok_or_else(|| Error::UnknownSample(sample_id.into()))
    }

    /// Pseudo-labels aligned with the sample order of `target`.
    pub fn labels_for(&self, target: &DomainDataset) -> Result<Vec<usize>> {
        target.samples.iter().map(|s| self.label_of(&s.id)).collect()
    }

    /// Checks that every target sample has exactly one record and nothing else does.
    pub fn check_covers(&self, target: &DomainDataset) -> Result<()> {
        if target.num_classes != self.num_classes {
            return Err(Error::ClassMismatch {
                model: self.num_classes,
                expected: target.num_classes,
            });
        }
        for s in &target.samples {
            self.label_of(&s.id)?;
        }
        if self.records.len() != target.len() {
            let extra = self
                .records
                .iter()
                .find(|r| !target.samples.iter().any(|s| s.id == r.sample_id))
                .map(|r| r.sample_id.clone())
                .unwrap_or_default();
            return Err(Error::UnknownSample(extra));
        }
        Ok(())
    }

    /// Fraction of samples whose pseudo-label differs from the ground truth.
    /// For evaluation and tracing only.
    pub fn noise_rate(&self, target: &DomainDataset) -> Result<f64> {
        if target.is_empty() {
            return Err(Error::EmptyDataset(target.domain.clone()));
        }
        let mut wrong = 0usize;
        for s in &target.samples {
            if self.label_of(&s.id)? != s.label {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / target.len() as f64)
    }

    pub fn count_by_source(&self, source: LabelSource) -> usize {
        self.records.iter().filter(|r| r.source == source).count()
    }

    /// Writes one JSON object per line.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::path(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::path(path, e))?;
        }
        w.flush().map_err(|e| Error::path(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>, num_classes: usize) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::path(path, e))?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::path(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Self::new(num_classes, records)
    }
}

/// Shannon entropy (natural log) of a probability vector; `0 log 0 = 0`.
pub fn self_entropy(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidDistribution(format!("entry {p} is not a probability")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
    }
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    Ok(h.clamp(0.0, (probs.len() as f64).ln()))
}

/// Softmax in f64 of one row of f32 logits.
pub(crate) fn probabilities_f64(logits: ArrayView1<'_, f32>) -> Vec<f64> {
    softmax(logits.mapv(f64::from).view()).to_vec()
}

/// Labels every target sample with the source model's argmax prediction.
pub fn infer_pseudo_labels(model: &Classifier, target: &DomainDataset) -> Result<PseudoLabelSet> {
    if target.is_empty() {
        return Err(Error::EmptyDataset(format!("{} {}", target.domain, target.split)));
    }
    if model.num_classes() != target.num_classes {
        return Err(Error::ClassMismatch {
            model: model.num_classes(),
            expected: target.num_classes,
        });
    }
    let logits = predict_logits(model, &target.images())?;
    let records = target
        .samples
        .iter()
        .zip(logits.rows())
        .map(|(s, row)| {
            let probs = probabilities_f64(row);
            let label = argmax(row.iter().copied());
            PseudoLabelRecord::from_probabilities(&s.id, label, &probs, LabelSource::Inferred)
        })
        .collect::<Result<Vec<_>>>()?;
    PseudoLabelSet::new(target.num_classes, records)
}

/// For each class, the `per_class` sample ids with the lowest self-entropy
/// among samples pseudo-labelled with that class, sorted ascending (ties by
/// sample id).
pub fn select_confident_priors(
    labels: &PseudoLabelSet,
    target: &DomainDataset,
    per_class: usize,
) -> Result<Vec<Vec<String>>> {
    if per_class == 0 {
        return Err(Error::Config("priors per class must be at least 1".into()));
    }
    labels.check_covers(target)?;
    let mut by_class: Vec<Vec<&PseudoLabelRecord>> = vec![Vec::new(); labels.num_classes];
    for s in &target.samples {
        let r = labels.get(&s.id).expect("coverage checked");
        by_class[r.pseudo_label].push(r);
    }
    let mut out = Vec::with_capacity(by_class.len());
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptyClass {
                class,
                name: target.class_names[class].clone(),
            });
        }
        members.sort_by(|a, b| {
            a.self_entropy
                .total_cmp(&b.self_entropy)
                .then_with(|| a.sample_id.cmp(&b.sample_id))
        });
        if members.len() < per_class {
            log::warn!(
                "class {class} ({}) has only {} pseudo-labelled samples, fewer than {per_class}",
                target.class_names[class],
                members.len()
            );
        }
        out.push(members.iter().take(per_class).map(|r| r.sample_id.clone()).collect());
    }
    Ok(out)
}
