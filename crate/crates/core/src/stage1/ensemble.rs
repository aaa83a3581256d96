use std::collections::{HashMap, VecDeque};

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::refine::RefineConfig;
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::nn::loss::softmax;

/// Ensemble members plus, for every sample, a ring buffer of the last
/// `history_len` logit vectors emitted by each member.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub members: Vec<Classifier>,
    pub epoch: usize,
    history_len: usize,
    num_classes: usize,
    slots: HashMap<String, usize>,
    // [sample slot][member] -> oldest..newest
    history: Vec<Vec<VecDeque<Vec<f32>>>>,
}

impl EnsembleState {
    pub fn new(members: Vec<Classifier>, history_len: usize) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Config(format!(
                "an ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        if history_len == 0 {
            return Err(Error::Config("history length must be at least 1".into()));
        }
        let config = members[0].config().clone();
        if members.iter().any(|m| m.config() != &config) {
            return Err(Error::Config("ensemble members must share one architecture".into()));
        }
        Ok(Self {
            num_classes: config.num_classes,
            members,
            epoch: 0,
            history_len,
            slots: HashMap::new(),
            history: Vec::new(),
        })
    }

    /// `config.members` copies of `source`. With `config.reinit_heads`
    /// each head is re-initialised from its own stream of `config.seed`.
    pub fn from_source(source: &Classifier, config: &RefineConfig) -> Result<Self> {
        let copies = (0..config.members)
            .map(|k| {
                let mut m = source.clone();
                if config.reinit_heads {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(k as u64 + 1);
                    m.reinit_head(&mut rng);
                }
                m
            })
            .collect();
        Self::new(copies, config.history_len)
    }

    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    /// Number of buffered outputs of `member` for a sample.
    pub fn buffered(&self, sample_id: &str, member: usize) -> usize {
        self.slots
            .get(sample_id)
            .map_or(0, |&s| self.history[s][member].len())
    }

    /// Appends one member output, evicting the oldest beyond the buffer length.
    pub fn record(&mut self, member: usize, sample_id: &str, logits: &[f32]) -> Result<()> {
        if member >= self.members.len() {
            return Err(Error::Config(format!("no ensemble member {member}")));
        }
        if logits.len() != self.num_classes {
            return Err(Error::Shape(format!(
                "expected {} logits, got {}",
                self.num_classes,
                logits.len()
            )));
        }
        let slot = match self.slots.get(sample_id) {
            Some(&s) => s,
            None => {
                self.history.push(vec![VecDeque::new(); self.members.len()]);
                self.slots.insert(sample_id.to_string(), self.history.len() - 1);
                self.history.len() - 1
            }
        };
        let ring = &mut self.history[slot][member];
        if ring.len() == self.history_len {
            ring.pop_front();
        }
        ring.push_back(logits.to_vec());
        Ok(())
    }

    /// Softmax of the mean over every buffered logit vector of every member.
    pub fn fuse(&self, sample_id: &str) -> Result<Vec<f64>> {
        let slot = *self
            .slots
            .get(sample_id)
            .ok_or_else(|| Error::EmptyHistory(sample_id.into()))?;
        let rings = &self.history[slot];
        if rings.iter().any(VecDeque::is_empty) {
            return Err(Error::EmptyHistory(sample_id.into()));
        }
        let mut mean = Array1::<f64>::zeros(self.num_classes);
        let mut count = 0usize;
        for ring in rings {
            for z in ring {
                for (m, &v) in mean.iter_mut().zip(z) {
                    *m += v as f64;
                }
                count += 1;
            }
        }
        mean /= count as f64;
        Ok(softmax(mean.view()).to_vec())
    }
}
