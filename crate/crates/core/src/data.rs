//! Images, labelled samples and per-domain datasets.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{FeatureMap, Scalar};

/// A float image in CHW order with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Stacks same-shaped images into a network input.
pub fn batch_tensor<T: Scalar>(images: &[&Image]) -> Result<FeatureMap<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::EmptyDataset("empty image batch".into()))?;
    let (c, h, w) = first.shape();
    if let Some(bad) = images.iter().find(|im| im.shape() != (c, h, w)) {
        return Err(Error::Shape(format!(
            "mixed image shapes in batch: {:?} vs {:?}",
            bad.shape(),
            (c, h, w)
        )));
    }
    let slices: Vec<&[f32]> = images.iter().map(|im| im.data.as_slice()).collect();
    Ok(FeatureMap::from_chw(&slices, c, h, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub image: Image,
    /// Ground-truth class. For target domains this is quarantined: only
    /// evaluation code may read it.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    pub domain: String,
    pub split: Split,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<LabeledSample>,
}

impl DomainDataset {
    /// Builds a dataset and checks its invariants.
    pub fn new(
        domain: impl Into<String>,
        split: Split,
        class_names: Vec<String>,
        samples: Vec<LabeledSample>,
    ) -> Result<Self> {
        let ds = Self {
            domain: domain.into(),
            split,
            num_classes: class_names.len(),
            class_names,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.samples.first().map(|s| s.image.shape())
    }

    pub fn images(&self) -> Vec<&Image> {
        self.samples.iter().map(|s| &s.image).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            if s.label < self.num_classes {
                counts[s.label] += 1;
            }
        }
        counts
    }

    /// Checks labels, pixel range, shape uniformity and id uniqueness.
    pub fn validate(&self) -> Result<()> {
        self.validate_labels()?;
        let shape = self.image_shape();
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if Some(s.image.shape()) != shape {
                return Err(Error::Shape(format!("sample {} has shape {:?}", s.id, s.image.shape())));
            }
            if s.image.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Shape(format!("sample {} has pixels outside [0, 1]", s.id)));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Shape(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(())
    }

    pub fn validate_labels(&self) -> Result<()> {
        match self.samples.iter().find(|s| s.label >= self.num_classes) {
            Some(s) => Err(Error::LabelOutOfRange {
                sample_id: s.id.clone(),
                label: s.label,
                num_classes: self.num_classes,
            }),
            None => Ok(()),
        }
    }

    /// Concatenates datasets sharing one label set (multi-source unions).
    pub fn union(domain: impl Into<String>, parts: &[&DomainDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyDataset("union of zero datasets".into()))?;
        if parts.iter().any(|p| p.class_names != first.class_names) {
            return Err(Error::Config("union of datasets with different label sets".into()));
        }
        let samples = parts.iter().flat_map(|p| p.samples.iter().cloned()).collect();
        Self::new(domain, first.split, first.class_names.clone(), samples)
    }
}
