//! Disjoint residual labels and the complementary-label loss.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::loss::softmax;
use crate::nn::Scalar;

/// Upper clip applied to residual-class probabilities before `log(1 - p)`.
pub const MAX_RESIDUAL_PROB: f64 = 1.0 - 1e-7;

/// Residual-label subsets of one sample, one per ensemble member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrlAssignment {
    pub pseudo_label: usize,
    pub subsets: Vec<Vec<usize>>,
}

impl DrlAssignment {
    pub fn subset_size(&self) -> usize {
        self.subsets.first().map_or(0, Vec::len)
    }

    /// Pairwise disjoint, equal-sized and free of the pseudo-label.
    pub fn is_well_formed(&self, num_classes: usize) -> bool {
        let mut seen = vec![false; num_classes];
        let size = self.subset_size();
        for s in &self.subsets {
            if s.len() != size || size == 0 {
                return false;
            }
            for &c in s {
                if c >= num_classes || c == self.pseudo_label || seen[c] {
                    return false;
                }
                seen[c] = true;
            }
        }
        true
    }
}

/// `N_DRL = floor((C - 1) / N_e)`, or a configuration error if `C - 1 < N_e`.
pub fn drl_size(num_classes: usize, members: usize) -> Result<usize> {
    if members == 0 || num_classes < members + 1 {
        return Err(Error::Config(format!(
            "{members} ensemble members need at least {} classes, got {num_classes}",
            members + 1
        )));
    }
    Ok((num_classes - 1) / members)
}

/// Shuffles the residual labels `{0..C-1} \ {pseudo_label}` and cuts them
/// into `members` blocks of `N_DRL`; leftovers are dropped for this draw.
pub fn sample_drl<R: Rng + ?Sized>(
    pseudo_label: usize,
    num_classes: usize,
    members: usize,
    rng: &mut R,
) -> Result<DrlAssignment> {
    let size = drl_size(num_classes, members)?;
    if pseudo_label >= num_classes {
        return Err(Error::Config(format!(
            "pseudo-label {pseudo_label} outside [0, {num_classes})"
        )));
    }
    let mut residual: Vec<usize> = (0..num_classes).filter(|&c| c != pseudo_label).collect();
    residual.shuffle(rng);
    let subsets = residual
        .chunks_exact(size)
        .take(members)
        .map(|c| c.to_vec())
        .collect();
    Ok(DrlAssignment {
        pseudo_label,
        subsets,
    })
}

/// `-(1/|S|) sum_{c in S} log(1 - p_c)` for a probability vector `p`.
pub fn drl_loss(probs: &[f64], residual: &[usize]) -> Result<f64> {
    if residual.is_empty() {
        return Err(Error::Config("empty residual label set".into()));
    }
    let mut sum = 0.0;
    for &c in residual {
        let p = *probs.get(c).ok_or_else(|| {
            Error::Config(format!("residual label {c} outside [0, {})", probs.len()))
        })?;
        sum -= (1.0 - p.min(MAX_RESIDUAL_PROB)).ln();
    }
    Ok(sum / residual.len() as f64)
}

/// Batch-mean residual loss on logits and its gradient. Row `i` uses the
/// residual set `residuals[i]`.
///
/// With `p = softmax(z)`, `q_c = p_c / (1 - p_c)` and `m = |S|`:
/// `dL/dz_j = (1/m) (q_j [j in S] - p_j sum_{c in S} q_c)`.
pub fn drl_loss_logits<T: Scalar>(logits: &Array2<T>, residuals: &[&[usize]]) -> (T, Array2<T>) {
    assert_eq!(logits.nrows(), residuals.len());
    let n = T::of(residuals.len() as f64);
    let cap = T::of(MAX_RESIDUAL_PROB);
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = T::zero();
    for (i, set) in residuals.iter().enumerate() {
        let p = softmax(logits.row(i));
        let m = T::of(set.len() as f64);
        let mut q_sum = T::zero();
        let mut row_loss = T::zero();
        for &c in set.iter() {
            let pc = p[c].min(cap);
            let q = pc / (T::one() - pc);
            q_sum += q;
            row_loss -= (T::one() - pc).ln();
            grad[[i, c]] += q;
        }
        for j in 0..p.len() {
            grad[[i, j]] = (grad[[i, j]] - p[j] * q_sum) / (m * n);
        }
        loss += row_loss / m;
    }
    (loss / n, grad)
}
