//! Persistence of synthesised images and loss traces.
//!
//! Tensor file layout: magic `CSUDASYN`, `u32` version, `u64` header
//! length, a JSON header (`channels`, `height`, `width`, per-image `label`
//! and `prior_id`), then all pixels as little-endian `f32` in CHW order,
//! image after image.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synthesize::SynthesisBatch;
use crate::data::Image;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CSUDASYN";
const VERSION: u32 = 1;

/// Flat view of synthesised images with their conditioning labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub prior_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    channels: usize,
    height: usize,
    width: usize,
    entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    label: usize,
    prior_id: String,
}

impl SyntheticSet {
    pub fn from_batches(batches: &[SynthesisBatch]) -> Self {
        let mut set = Self {
            images: Vec::new(),
            labels: Vec::new(),
            prior_ids: Vec::new(),
        };
        for b in batches {
            for (img, id) in b.images.iter().zip(&b.prior_ids) {
                set.images.push(img.clone());
                set.labels.push(b.label);
                set.prior_ids.push(id.clone());
            }
        }
        set
    }

    pub fn empty() -> Self {
        Self {
            images: Vec::new(),
            labels: Vec::new(),
            prior_ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (channels, height, width) = self.images.first().map_or((0, 0, 0), Image::shape);
        let header = Header {
            channels,
            height,
            width,
            entries: self
                .labels
                .iter()
                .zip(&self.prior_ids)
                .map(|(&label, id)| Entry {
                    label,
                    prior_id: id.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let file = File::create(path).map_err(|e| Error::path(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::path(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for img in &self.images {
            if img.shape() != (channels, height, width) {
                return Err(Error::Shape("synthetic images differ in shape".into()));
            }
            for v in &img.data {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::path(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::path(path, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a synthetic image file", path.display())));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(io)?;
        if u32::from_le_bytes(u32buf) != VERSION {
            return Err(Error::Checkpoint("unsupported synthetic file version".into()));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf).map_err(io)?;
        let mut json = vec![0u8; u64::from_le_bytes(u64buf) as usize];
        r.read_exact(&mut json).map_err(io)?;
        let header: Header = serde_json::from_slice(&json)?;
        let per_image = header.channels * header.height * header.width;
        let mut set = Self::empty();
        let mut buf = vec![0u8; per_image * 4];
        for e in header.entries {
            r.read_exact(&mut buf).map_err(io)?;
            let data = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            set.images.push(Image::new(header.channels, header.height, header.width, data)?);
            set.labels.push(e.label);
            set.prior_ids.push(e.prior_id);
        }
        Ok(set)
    }
}

/// One CSV row per class and step: `class, step, total, ce, tv, bn`.
pub fn write_loss_trace_csv(batches: &[SynthesisBatch], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["class", "step", "total", "ce", "tv", "bn"])?;
    for b in batches {
        for (step, p) in b.loss_trace.iter().enumerate() {
            w.write_record([
                b.label.to_string(),
                step.to_string(),
                format!("{:.8e}", p.total),
                format!("{:.8e}", p.ce),
                format!("{:.8e}", p.tv),
                format!("{:.8e}", p.bn),
            ])?;
        }
    }
    w.flush().map_err(Error::Io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_file_round_trip() {
        let set = SyntheticSet {
            images: vec![Image::filled(3, 2, 2, 0.25), Image::filled(3, 2, 2, 0.75)],
            labels: vec![1, 4],
            prior_ids: vec!["a".into(), "b".into()],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synth.bin");
        set.write(&path).unwrap();
        assert_eq!(SyntheticSet::read(&path).unwrap(), set);
        std::fs::write(&path, b"garbage").unwrap();
        assert!(SyntheticSet::read(&path).is_err());
    }
}
