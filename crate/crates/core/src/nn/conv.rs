use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FeatureMap, Scalar};

/// Bias-free 2-D convolution computed as `weight · im2col(x)`.
///
/// `weight` has shape `(out_channels, in_channels * kernel * kernel)`, row
/// index `(ci * kernel + ky) * kernel + kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Array2<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    /// Kaiming-normal initialisation (fan-in, ReLU gain).
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out_channels, fan_in), || {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        });
        Self {
            weight,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let out = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (out(height), out(width))
    }

    pub fn im2col(&self, x: &FeatureMap<T>) -> Array2<T> {
        let (ho, wo) = self.output_size(x.height, x.width);
        let (h, w, k, s) = (x.height, x.width, self.kernel, self.stride);
        let pad = self.padding as isize;
        let n_out = x.batch * ho * wo;
        let rows = self.in_channels * k * k;
        let src = x.data.as_slice().expect("standard layout");
        let in_row = x.batch * h * w;
        let mut cols = vec![T::zero(); rows * n_out];
        for ci in 0..self.in_channels {
            let plane = &src[ci * in_row..(ci + 1) * in_row];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * n_out..(row + 1) * n_out];
                    for n in 0..x.batch {
                        for oy in 0..ho {
                            let iy = (oy * s) as isize + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = &plane[(n * h + iy as usize) * w..(n * h + iy as usize + 1) * w];
                            let dst_row = &mut dst[(n * ho + oy) * wo..(n * ho + oy + 1) * wo];
                            for (ox, d) in dst_row.iter_mut().enumerate() {
                                let ix = (ox * s) as isize + kx as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Array2::from_shape_vec((rows, n_out), cols).expect("im2col shape")
    }

    /// Scatter-adds column gradients back onto the input grid.
    fn col2im(&self, dcols: &Array2<T>, batch: usize, h: usize, w: usize) -> FeatureMap<T> {
        let (ho, wo) = self.output_size(h, w);
        let (k, s) = (self.kernel, self.stride);
        let pad = self.padding as isize;
        let n_out = batch * ho * wo;
        let in_row = batch * h * w;
        let src = dcols.as_slice().expect("standard layout");
        let mut out = vec![T::zero(); self.in_channels * in_row];
        for ci in 0..self.in_channels {
            let plane = &mut out[ci * in_row..(ci + 1) * in_row];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let col_row = &src[row * n_out..(row + 1) * n_out];
                    for n in 0..batch {
                        for oy in 0..ho {
                            let iy = (oy * s) as isize + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = (n * h + iy as usize) * w;
                            let g_row = &col_row[(n * ho + oy) * wo..(n * ho + oy + 1) * wo];
                            for (ox, &g) in g_row.iter().enumerate() {
                                let ix = (ox * s) as isize + kx as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    plane[base + ix as usize] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
        FeatureMap::new(
            Array2::from_shape_vec((self.in_channels, in_row), out).expect("col2im shape"),
            batch,
            h,
            w,
        )
    }

    /// Returns the output map and the im2col buffer needed for backward.
    pub fn forward(&self, x: &FeatureMap<T>) -> (FeatureMap<T>, Array2<T>) {
        let (ho, wo) = self.output_size(x.height, x.width);
        let cols = self.im2col(x);
        let out = self.weight.dot(&cols);
        (FeatureMap::new(out, x.batch, ho, wo), cols)
    }

    /// Gradients w.r.t. the weight and, if requested, the input.
    pub fn backward(
        &self,
        dy: &Array2<T>,
        cols: &Array2<T>,
        input_dims: (usize, usize, usize),
        input_grad: bool,
    ) -> (Array2<T>, Option<FeatureMap<T>>) {
        let dw = dy.dot(&cols.t());
        let dx = input_grad.then(|| {
            let dcols = self.weight.t().dot(dy);
            let (batch, h, w) = input_dims;
            self.col2im(&dcols, batch, h, w)
        });
        (dw, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution used as an oracle for im2col + GEMM.
    fn naive(conv: &Conv2d<f64>, x: &FeatureMap<f64>) -> FeatureMap<f64> {
        let (ho, wo) = conv.output_size(x.height, x.width);
        let mut out = FeatureMap::zeros(conv.out_channels, x.batch, ho, wo);
        for co in 0..conv.out_channels {
            for n in 0..x.batch {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..conv.in_channels {
                            for ky in 0..conv.kernel {
                                for kx in 0..conv.kernel {
                                    let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= x.height as isize || ix >= x.width as isize {
                                        continue;
                                    }
                                    let col = (n * x.height + iy as usize) * x.width + ix as usize;
                                    let wi = (ci * conv.kernel + ky) * conv.kernel + kx;
                                    acc += conv.weight[[co, wi]] * x.data[[ci, col]];
                                }
                            }
                        }
                        out.data[[co, (n * ho + oy) * wo + ox]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn gemm_conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, &mut rng);
        let x = FeatureMap::new(
            Array2::from_shape_simple_fn((2, 2 * 5 * 6), || rng.random::<f64>() - 0.5),
            2,
            5,
            6,
        );
        let (fast, _) = conv.forward(&x);
        let slow = naive(&conv, &x);
        assert_eq!((fast.height, fast.width), (3, 3));
        for (a, b) in fast.data.iter().zip(slow.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn input_gradient_is_adjoint_of_forward() {
        // <conv(x), g> == <x, conv^T(g)> for a linear operator.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv2d::<f64>::new(3, 4, 3, 2, 1, &mut rng);
        let x = FeatureMap::new(
            Array2::from_shape_simple_fn((3, 2 * 8 * 8), || rng.random::<f64>() - 0.5),
            2,
            8,
            8,
        );
        let (y, cols) = conv.forward(&x);
        let g = Array2::from_shape_simple_fn(y.data.raw_dim(), || rng.random::<f64>() - 0.5);
        let (_, dx) = conv.backward(&g, &cols, (2, 8, 8), true);
        let lhs: f64 = (&y.data * &g).sum();
        let rhs: f64 = (&x.data * &dx.unwrap().data).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
