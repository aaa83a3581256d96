//! Synthesis objective: cross-entropy on the frozen classifier plus
//! total-variation and BatchNorm-statistics regularisers.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BnStatProfile;
use crate::nn::loss::cross_entropy;
use crate::nn::{BnMode, FeatureMap, Scalar, ToyNet};

/// Isotropic total variation of one `(c, h, w)` image, channels summed.
/// Differences that would read past the border count as zero.
pub fn tv_norm<T: Scalar>(image: &[T], channels: usize, height: usize, width: usize) -> T {
    tv_norm_with_grad(image, channels, height, width, false).0
}

/// TV value and, when `want_grad`, its gradient. Pixels whose local
/// variation is exactly zero get a zero subgradient.
pub fn tv_norm_with_grad<T: Scalar>(
    image: &[T],
    channels: usize,
    height: usize,
    width: usize,
    want_grad: bool,
) -> (T, Vec<T>) {
    assert_eq!(image.len(), channels * height * width, "image buffer size");
    let mut total = T::zero();
    let mut grad = if want_grad {
        vec![T::zero(); image.len()]
    } else {
        Vec::new()
    };
    for c in 0..channels {
        let base = c * height * width;
        for u in 0..height {
            for v in 0..width {
                let i = base + u * width + v;
                let dx = if v + 1 < width { image[i + 1] - image[i] } else { T::zero() };
                let dy = if u + 1 < height { image[i + width] - image[i] } else { T::zero() };
                let r = (dx * dx + dy * dy).sqrt();
                total += r;
                if want_grad && r > T::zero() {
                    let (gx, gy) = (dx / r, dy / r);
                    grad[i] -= gx + gy;
                    if v + 1 < width {
                        grad[i + 1] += gx;
                    }
                    if u + 1 < height {
                        grad[i + width] += gy;
                    }
                }
            }
        }
    }
    (total, grad)
}

/// `sum_l ||mu_l(x) - mu_l||_2 + ||var_l(x) - var_l||_2` from per-layer
/// batch statistics, with the gradient w.r.t. each batch mean and variance.
pub fn bn_match_from_stats<T: Scalar>(
    batch_stats: &[(Array1<T>, Array1<T>)],
    profile: &BnStatProfile,
) -> Result<(T, Vec<(Array1<T>, Array1<T>)>)> {
    if batch_stats.len() != profile.layers.len() {
        return Err(Error::Shape(format!(
            "{} BN layers traced, profile has {}",
            batch_stats.len(),
            profile.layers.len()
        )));
    }
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(batch_stats.len());
    for ((mean, var), stored) in batch_stats.iter().zip(&profile.layers) {
        if mean.len() != stored.mean.len() {
            return Err(Error::Shape("BN channel count differs from profile".into()));
        }
        let dm = Array1::from_iter(mean.iter().zip(&stored.mean).map(|(&a, &b)| a - T::of(b)));
        let dv = Array1::from_iter(var.iter().zip(&stored.var).map(|(&a, &b)| a - T::of(b)));
        let (nm, nv) = (l2(&dm), l2(&dv));
        loss += nm + nv;
        grads.push((unit(dm, nm), unit(dv, nv)));
    }
    Ok((loss, grads))
}

fn l2<T: Scalar>(v: &Array1<T>) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

fn unit<T: Scalar>(v: Array1<T>, norm: T) -> Array1<T> {
    if norm > T::zero() {
        v / norm
    } else {
        Array1::zeros(v.len())
    }
}

/// BN matching loss of a batch: statistics of each BN layer's input are
/// taken over the batch while the network itself normalises with its
/// stored running statistics.
pub fn bn_match_loss<T: Scalar>(model: &ToyNet<T>, batch: &FeatureMap<T>, profile: &BnStatProfile) -> Result<T> {
    if batch.batch < 2 {
        return Err(Error::Config("BN matching needs a batch of at least 2 images".into()));
    }
    profile.check_matches(model)?;
    let (_, trace) = model.forward(batch, BnMode::Eval, false);
    Ok(bn_match_from_stats(&trace.batch_stats, profile)?.0)
}

/// Components of the synthesis objective at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub tv: f64,
    pub bn: f64,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.ce.is_finite() && self.tv.is_finite() && self.bn.is_finite()
    }
}

/// Which terms enter the objective; handy for isolating one in gradient checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub ce: f64,
    pub tv: f64,
    pub bn: f64,
}

/// `ce * CE + tv * mean_i TV(x_i) + bn * R_BN` for a batch and its gradient
/// w.r.t. the pixels. The reported parts are unweighted.
pub fn synthesis_objective<T: Scalar>(
    model: &ToyNet<T>,
    x: &FeatureMap<T>,
    labels: &[usize],
    profile: &BnStatProfile,
    weights: Weights,
) -> Result<(LossParts, FeatureMap<T>)> {
    if x.batch != labels.len() {
        return Err(Error::Shape("one label per image required".into()));
    }
    let use_bn = weights.bn != 0.0;
    if use_bn && x.batch < 2 {
        return Err(Error::Config("BN matching needs a batch of at least 2 images".into()));
    }
    let (logits, trace) = model.forward(x, BnMode::Eval, use_bn);
    let (ce, mut dlogits) = cross_entropy(&logits, labels);
    dlogits *= T::of(weights.ce);

    let (bn, stat_grads) = if use_bn {
        let (loss, mut grads) = bn_match_from_stats(&trace.batch_stats, profile)?;
        for (gm, gv) in &mut grads {
            *gm *= T::of(weights.bn);
            *gv *= T::of(weights.bn);
        }
        (loss, Some(grads))
    } else {
        (T::zero(), None)
    };
    let (_, dx) = model.backward(&trace, &dlogits, stat_grads.as_deref(), true);
    let mut dx = dx.expect("input gradient requested");

    let (c, h, w) = (x.channels(), x.height, x.width);
    let hw = h * w;
    let scale = T::of(weights.tv) / T::of(x.batch as f64);
    let mut tv = T::zero();
    let row_len = x.batch * hw;
    let dst = dx.data.as_slice_mut().expect("standard layout");
    for n in 0..x.batch {
        let image = x.image_chw(n);
        let (t, g) = tv_norm_with_grad(&image, c, h, w, weights.tv != 0.0);
        tv += t;
        if weights.tv != 0.0 {
            for ch in 0..c {
                for k in 0..hw {
                    dst[ch * row_len + n * hw + k] += scale * g[ch * hw + k];
                }
            }
        }
    }
    let tv = tv / T::of(x.batch as f64);
    let total = T::of(weights.ce) * ce + T::of(weights.tv) * tv + T::of(weights.bn) * bn;
    Ok((
        LossParts {
            total: total.as_f64(),
            ce: ce.as_f64(),
            tv: tv.as_f64(),
            bn: bn.as_f64(),
        },
        dx,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BnLayerStats;

    #[test]
    fn tv_hand_cases() {
        assert_eq!(tv_norm(&[0.3f64; 12], 3, 2, 2), 0.0);
        assert!((tv_norm(&[0.0f64, 1.0, 0.0, 1.0], 1, 2, 2) - 2.0).abs() < 1e-12);
        let x = [0.1f64, 0.7, 0.4, 0.9, 0.2, 0.5];
        let scaled: Vec<f64> = x.iter().map(|v| v * 2.5).collect();
        assert!((tv_norm(&scaled, 1, 2, 3) - 2.5 * tv_norm(&x, 1, 2, 3)).abs() < 1e-12);
    }

    #[test]
    fn bn_single_layer_hand_case() {
        let profile = BnStatProfile {
            layers: vec![BnLayerStats {
                mean: vec![0.0],
                var: vec![1.0],
            }],
        };
        let stats = vec![(Array1::from(vec![0.5f64]), Array1::from(vec![1.0f64]))];
        let (loss, grads) = bn_match_from_stats(&stats, &profile).unwrap();
        assert!((loss - 0.5).abs() < 1e-12);
        assert_eq!(grads[0].0[0], 1.0);
        assert_eq!(grads[0].1[0], 0.0);
    }
}
