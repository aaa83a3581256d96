use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::drl::{drl_loss_logits, drl_size, sample_drl, DrlAssignment};
use super::ensemble::EnsembleState;
use crate::data::{batch_tensor, DomainDataset, Image};
use crate::error::{Error, Result};
use crate::model::{predict_logits, sgd_step};
use crate::nn::loss::argmax;
use crate::nn::Sgd;
use crate::pseudo_labels::{LabelSource, PseudoLabelRecord, PseudoLabelSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub epochs: usize,
    /// Ensemble size `N_e`.
    pub members: usize,
    /// Buffered outputs per member and sample, `N_a`.
    pub history_len: usize,
    /// Reassignment period `R` in epochs.
    pub reassign_every: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Start members from fresh heads instead of the source head.
    pub reinit_heads: bool,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            members: 3,
            history_len: 10,
            reassign_every: 5,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            reinit_heads: false,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        drl_size(num_classes, self.members)?;
        if self.members < 2 {
            return Err(Error::Config(format!("N_e must be at least 2, got {}", self.members)));
        }
        if self.history_len == 0 || self.reassign_every == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "history_len, reassign_every and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning rate must be > 0 and momentum in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-epoch bookkeeping of a refinement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineEpoch {
    pub epoch: usize,
    /// Mean residual loss over members and samples.
    pub mean_loss: f64,
    /// Labels changed at the end of this epoch.
    pub reassigned: usize,
    /// Samples whose label has changed at least once so far.
    pub ever_reassigned: usize,
    /// Fraction of wrong pseudo-labels, when ground truth was supplied.
    pub noise_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub labels: PseudoLabelSet,
    pub ensemble: EnsembleState,
    pub trace: Vec<RefineEpoch>,
}

/// Progressive pseudo-label refinement.
///
/// Every epoch draws fresh residual labels for each sample, trains each
/// member for one pass on the residual loss, and buffers each member's
/// evaluation-mode logits. Every `reassign_every` epochs, samples whose
/// fused confidence in their label is below the mean fused confidence of
/// their class are relabelled with the fused argmax.
///
/// `ground_truth` is only read to fill [`RefineEpoch::noise_rate`].
pub fn refine(
    mut ensemble: EnsembleState,
    target: &DomainDataset,
    labels: &PseudoLabelSet,
    config: &RefineConfig,
    ground_truth: Option<&[usize]>,
) -> Result<RefineOutcome> {
    config.validate(labels.num_classes())?;
    labels.check_covers(target)?;
    if ensemble.num_members() != config.members {
        return Err(Error::Config(format!(
            "ensemble has {} members, config expects {}",
            ensemble.num_members(),
            config.members
        )));
    }
    if ensemble.num_classes() != labels.num_classes() {
        return Err(Error::ClassMismatch {
            model: ensemble.num_classes(),
            expected: labels.num_classes(),
        });
    }
    if let Some(gt) = ground_truth {
        if gt.len() != target.len() {
            return Err(Error::Shape("ground truth does not match the target set".into()));
        }
    }
    if config.epochs == 0 {
        return Ok(RefineOutcome {
            labels: labels.clone(),
            ensemble,
            trace: Vec::new(),
        });
    }

    let num_classes = labels.num_classes();
    let n = target.len();
    let images: Vec<&Image> = target.images();
    let mut current = labels.labels_for(target)?;
    let mut ever = vec![false; n];
    let mut drl_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order_rngs: Vec<ChaCha8Rng> = (0..config.members)
        .map(|k| {
            let mut r = ChaCha8Rng::seed_from_u64(config.seed);
            r.set_stream(1000 + k as u64);
            r
        })
        .collect();
    let mut optimizers: Vec<Sgd<f32>> = (0..config.members)
        .map(|_| Sgd::new(config.learning_rate, config.momentum))
        .collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let assignments: Vec<DrlAssignment> = current
            .iter()
            .map(|&y| sample_drl(y, num_classes, config.members, &mut drl_rng))
            .collect::<Result<_>>()?;

        let mut loss_sum = 0.0;
        for k in 0..config.members {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut order_rngs[k]);
            for batch in order.chunks(config.batch_size) {
                let x = batch_tensor::<f32>(&batch.iter().map(|&i| images[i]).collect::<Vec<_>>())?;
                let residuals: Vec<&[usize]> =
                    batch.iter().map(|&i| assignments[i].subsets[k].as_slice()).collect();
                let (loss, _) = sgd_step(
                    &mut ensemble.members[k],
                    &mut optimizers[k],
                    &x,
                    false,
                    |logits| drl_loss_logits(logits, &residuals),
                );
                loss_sum += loss as f64 * batch.len() as f64;
            }
        }
        let mean_loss = loss_sum / (n * config.members) as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean_loss });
        }

        for k in 0..config.members {
            let logits = predict_logits(&ensemble.members[k], &images)?;
            for (s, row) in target.samples.iter().zip(logits.rows()) {
                ensemble.record(k, &s.id, row.as_slice().expect("contiguous rows"))?;
            }
        }
        ensemble.epoch += 1;

        let mut reassigned = 0;
        if (epoch + 1) % config.reassign_every == 0 {
            let fused = fuse_all(&ensemble, target)?;
            let thresholds = class_thresholds(&fused, &current, num_classes);
            for i in 0..n {
                let y = current[i];
                if fused[i][y] < thresholds[y] {
                    let new = argmax(fused[i].iter().copied());
                    if new != y {
                        current[i] = new;
                        ever[i] = true;
                        reassigned += 1;
                    }
                }
            }
        }
        let noise_rate = ground_truth.map(|gt| {
            gt.iter().zip(&current).filter(|(a, b)| a != b).count() as f64 / n as f64
        });
        log::debug!("refine epoch {epoch}: loss {mean_loss:.4}, reassigned {reassigned}");
        trace.push(RefineEpoch {
            epoch,
            mean_loss,
            reassigned,
            ever_reassigned: ever.iter().filter(|&&e| e).count(),
            noise_rate,
        });
    }

    let fused = fuse_all(&ensemble, target)?;
    let records = target
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let source = if ever[i] {
                LabelSource::Refined
            } else {
                labels.get(&s.id).expect("coverage checked").source
            };
            PseudoLabelRecord::from_probabilities(&s.id, current[i], &fused[i], source)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RefineOutcome {
        labels: PseudoLabelSet::new(num_classes, records)?,
        ensemble,
        trace,
    })
}

fn fuse_all(ensemble: &EnsembleState, target: &DomainDataset) -> Result<Vec<Vec<f64>>> {
    target.samples.iter().map(|s| ensemble.fuse(&s.id)).collect()
}

/// Mean fused confidence in the current label, per class (`+inf` for
/// classes nobody carries, so they never trigger).
fn class_thresholds(fused: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut sum = vec![0.0; num_classes];
    let mut count = vec![0usize; num_classes];
    for (p, &y) in fused.iter().zip(labels) {
        sum[y] += p[y];
        count[y] += 1;
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { f64::INFINITY } else { s / c as f64 })
        .collect()
}

/// Writes the per-epoch trace as CSV.
pub fn write_trace_csv(trace: &[RefineEpoch], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["epoch", "mean_loss", "reassigned", "ever_reassigned", "noise_rate"])?;
    for t in trace {
        w.write_record([
            t.epoch.to_string(),
            format!("{:.6}", t.mean_loss),
            t.reassigned.to_string(),
            t.ever_reassigned.to_string(),
            t.noise_rate.map(|r| format!("{r:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(Error::Io)
}
