use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::Scalar;

/// Fully connected layer `y = x Wᵀ + b`; `weight` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    /// Weights uniform in `±1/sqrt(in)`, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((outputs, inputs), || {
            T::of(rng.random_range(-bound..bound))
        });
        Self {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Returns `(dx, dweight, dbias)`.
    pub fn backward(&self, x: &Array2<T>, dy: &Array2<T>) -> (Array2<T>, Array2<T>, Array1<T>) {
        let dw = dy.t().dot(x);
        let db = dy.sum_axis(Axis(0));
        let dx = dy.dot(&self.weight);
        (dx, dw, db)
    }
}
