//! Minimal CPU neural-network toolkit: convolution, batch normalisation,
//! a linear head and the optimisers used by the pipeline.
//!
//! Everything is generic over [`Scalar`] so the same code path runs in
//! `f32` for training and in `f64` for finite-difference gradient checks.
//!
//! Activations are stored channel-major: a [`FeatureMap`] is a
//! `(channels, batch * height * width)` matrix, which turns batch
//! normalisation into a per-row reduction and convolution into one GEMM.

pub mod batchnorm;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod optim;
pub mod toynet;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use linear::Linear;
pub use optim::{cosine_annealing, Adam, Sgd};
pub use toynet::{BnMode, Gradients, ParamGroup, ToyNet, ToyNetConfig, Trace};

/// Floating-point element type accepted by the network.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, rounding if needed.
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("finite conversion")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + LinalgScalar
        + ScalarOperand
        + Sum
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Default
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// A batch of activations laid out as `(channels, batch * height * width)`.
///
/// Column `(n * height + y) * width + x` holds pixel `(y, x)` of image `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub data: Array2<T>,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(data: Array2<T>, batch: usize, height: usize, width: usize) -> Self {
        debug_assert_eq!(data.ncols(), batch * height * width);
        Self {
            data,
            batch,
            height,
            width,
        }
    }

    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self::new(
            Array2::zeros((channels, batch * height * width)),
            batch,
            height,
            width,
        )
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    /// Packs CHW images (all the same shape) into a feature map.
    pub fn from_chw(images: &[&[f32]], channels: usize, height: usize, width: usize) -> Self {
        let hw = height * width;
        let batch = images.len();
        let mut data = Array2::<T>::zeros((channels, batch * hw));
        {
            let out = data.as_slice_mut().expect("standard layout");
            for (n, img) in images.iter().enumerate() {
                assert_eq!(img.len(), channels * hw, "image length mismatch");
                for c in 0..channels {
                    let dst = &mut out[c * batch * hw + n * hw..c * batch * hw + (n + 1) * hw];
                    for (d, &s) in dst.iter_mut().zip(&img[c * hw..(c + 1) * hw]) {
                        *d = T::of(s as f64);
                    }
                }
            }
        }
        Self::new(data, batch, height, width)
    }

    /// Copies image `n` out in CHW order.
    pub fn image_chw(&self, n: usize) -> Vec<T> {
        let hw = self.spatial();
        let row_len = self.batch * hw;
        let src = self.data.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(self.channels() * hw);
        for c in 0..self.channels() {
            out.extend_from_slice(&src[c * row_len + n * hw..c * row_len + (n + 1) * hw]);
        }
        out
    }
}
