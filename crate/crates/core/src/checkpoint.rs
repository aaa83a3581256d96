//! Single-file checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 8 bytes   magic "CSUDACKP"
//! u32       format version (1)
//! u64       header length in bytes
//! header    UTF-8 JSON: architecture id, network config, training
//!           metadata and a tensor table {name, shape, offset, length}
//! blob      raw f32 values; each tensor occupies [offset, offset+length)
//!           elements of the blob
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{extract_bn_profile, BnStatProfile, Classifier};
use crate::nn::{ToyNet, ToyNetConfig};

const MAGIC: &[u8; 8] = b"CSUDACKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    architecture: String,
    config: ToyNetConfig,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Classifier,
    pub metadata: TrainingMetadata,
}

impl Checkpoint {
    pub fn new(model: Classifier, metadata: TrainingMetadata) -> Self {
        Self { model, metadata }
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    pub fn architecture_id(&self) -> String {
        self.model.config().architecture_id()
    }

    pub fn bn_profile(&self) -> Result<BnStatProfile> {
        extract_bn_profile(&self.model)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let tensors = self.model.named_tensors();
        let mut entries = Vec::with_capacity(tensors.len());
        let mut offset = 0;
        for t in &tensors {
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
                length: t.data.len(),
            });
            offset += t.data.len();
        }
        let header = Header {
            architecture: self.architecture_id(),
            config: self.model.config().clone(),
            metadata: self.metadata.clone(),
            tensors: entries,
        };
        let header_bytes = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for t in &tensors {
            for v in t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let header_len = u64::from_le_bytes(u64buf) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;
        if header.architecture != header.config.architecture_id() {
            return Err(Error::Checkpoint(format!(
                "architecture id {} does not match config ({})",
                header.architecture,
                header.config.architecture_id()
            )));
        }
        let mut blob = Vec::new();
        r.read_to_end(&mut blob)?;
        if blob.len() % 4 != 0 {
            return Err(Error::Checkpoint("truncated tensor blob".into()));
        }
        let values: Vec<f32> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();

        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model: Classifier = ToyNet::new(header.config.clone(), &mut rng);
        let expected: Vec<(String, Vec<usize>)> = model
            .named_tensors()
            .into_iter()
            .map(|t| (t.name, t.shape))
            .collect();
        if expected.len() != header.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, archive has {}",
                expected.len(),
                header.tensors.len()
            )));
        }
        for (name, shape) in expected {
            let entry = header
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if entry.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?}, expected {shape:?}",
                    entry.shape
                )));
            }
            let src = values
                .get(entry.offset..entry.offset + entry.length)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} out of bounds")))?;
            let dst = model
                .tensor_mut(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            if dst.len() != src.len() {
                return Err(Error::Checkpoint(format!("tensor {name}: length mismatch")));
            }
            dst.copy_from_slice(src);
        }
        Ok(Self {
            model,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::path(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::path(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    /// Loads and checks the class count against the expected label set.
    pub fn load_expecting(path: impl AsRef<Path>, num_classes: usize) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.num_classes() != num_classes {
            return Err(Error::Checkpoint(format!(
                "checkpoint is {}, expected toynet-c{num_classes}",
                ckpt.architecture_id()
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_classifier;

    #[test]
    fn rejects_foreign_bytes() {
        let err = Checkpoint::read_from(&b"NOTACKPTxxxxxxxxxxxx"[..]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn rejects_tampered_architecture_id() {
        let ckpt = Checkpoint::new(init_classifier(ToyNetConfig::standard(3), 0), TrainingMetadata::default());
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let pos = text.find("toynet-c3").unwrap();
        bytes[pos + 8] = b'5';
        assert!(matches!(Checkpoint::read_from(&bytes[..]), Err(Error::Checkpoint(_))));
    }
}
