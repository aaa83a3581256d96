use ndarray::{Array1, Array2, Axis};

use super::Scalar;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalisation with affine parameters and running
/// statistics (exponential moving average, momentum 0.1).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub momentum: T,
    pub eps: T,
}

/// Values cached by the forward pass for backward.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
    /// Whether normalisation used batch statistics (training) or the running ones.
    pub batch_stats: bool,
}

/// Per-channel mean and biased variance over the columns of `z`.
pub fn channel_stats<T: Scalar>(z: &Array2<T>) -> (Array1<T>, Array1<T>) {
    let m = T::of(z.ncols() as f64);
    let mut mean = Array1::zeros(z.nrows());
    let mut var = Array1::zeros(z.nrows());
    for (c, row) in z.axis_iter(Axis(0)).enumerate() {
        let mu = row.iter().copied().sum::<T>() / m;
        let v = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<T>() / m;
        mean[c] = mu;
        var[c] = v;
    }
    (mean, var)
}

impl<T: Scalar> BatchNorm2d<T> {
    /// Fresh layer: gamma = 1, beta = 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: T::of(BN_MOMENTUM),
            eps: T::of(BN_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalises `z` with the given statistics and applies the affine map.
    pub fn normalize(
        &self,
        z: &Array2<T>,
        mean: &Array1<T>,
        var: &Array1<T>,
        batch_stats: bool,
    ) -> (Array2<T>, BnCache<T>) {
        let inv_std = var.mapv(|v| T::one() / (v + self.eps).sqrt());
        let mut xhat = z.clone();
        let mut y = Array2::zeros(z.raw_dim());
        for c in 0..z.nrows() {
            let (mu, is, g, b) = (mean[c], inv_std[c], self.gamma[c], self.beta[c]);
            let mut xr = xhat.row_mut(c);
            let mut yr = y.row_mut(c);
            for (xh, yv) in xr.iter_mut().zip(yr.iter_mut()) {
                *xh = (*xh - mu) * is;
                *yv = g * *xh + b;
            }
        }
        (
            y,
            BnCache {
                xhat,
                inv_std,
                batch_stats,
            },
        )
    }

    /// Folds one batch's statistics into the running averages. The running
    /// variance uses the unbiased estimator.
    pub fn update_running(&mut self, mean: &Array1<T>, var: &Array1<T>, count: usize) {
        let m = self.momentum;
        let keep = T::one() - m;
        let correction = if count > 1 {
            T::of(count as f64 / (count - 1) as f64)
        } else {
            T::one()
        };
        self.running_mean
            .zip_mut_with(mean, |r, &b| *r = keep * *r + m * b);
        self.running_var
            .zip_mut_with(var, |r, &b| *r = keep * *r + m * b * correction);
    }

    /// Returns `(dz, dgamma, dbeta)`.
    pub fn backward(&self, cache: &BnCache<T>, dy: &Array2<T>) -> (Array2<T>, Array1<T>, Array1<T>) {
        let channels = dy.nrows();
        let m = T::of(dy.ncols() as f64);
        let mut dz = Array2::zeros(dy.raw_dim());
        let mut dgamma = Array1::zeros(channels);
        let mut dbeta = Array1::zeros(channels);
        for c in 0..channels {
            let dyr = dy.row(c);
            let xr = cache.xhat.row(c);
            let sum_dy: T = dyr.iter().copied().sum();
            let sum_dy_x: T = dyr.iter().zip(xr.iter()).map(|(&a, &b)| a * b).sum();
            dgamma[c] = sum_dy_x;
            dbeta[c] = sum_dy;
            let g = self.gamma[c] * cache.inv_std[c];
            let mut dzr = dz.row_mut(c);
            if cache.batch_stats {
                let scale = g / m;
                for ((d, &dyv), &xh) in dzr.iter_mut().zip(dyr.iter()).zip(xr.iter()) {
                    *d = scale * (m * dyv - sum_dy - xh * sum_dy_x);
                }
            } else {
                for (d, &dyv) in dzr.iter_mut().zip(dyr.iter()) {
                    *d = g * dyv;
                }
            }
        }
        (dz, dgamma, dbeta)
    }
}
