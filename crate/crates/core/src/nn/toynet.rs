//! ToyNet: `widths.len()` blocks of conv(3x3, stride 2) → BatchNorm → ReLU,
//! global average pooling and one linear head.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::{channel_stats, BnCache};
use super::{BatchNorm2d, Conv2d, FeatureMap, Linear, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyNetConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    pub image_size: usize,
    /// Output channels of each conv block. Empty means "pool the raw input".
    pub widths: Vec<usize>,
}

impl ToyNetConfig {
    pub const DEFAULT_WIDTHS: [usize; 3] = [8, 16, 32];

    /// The reference 32×32×3 architecture.
    pub fn standard(num_classes: usize) -> Self {
        Self {
            num_classes,
            in_channels: 3,
            image_size: 32,
            widths: Self::DEFAULT_WIDTHS.to_vec(),
        }
    }

    pub fn architecture_id(&self) -> String {
        format!("toynet-c{}", self.num_classes)
    }

    pub fn feature_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(self.in_channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalise with batch statistics (the caller updates running stats).
    Train,
    /// Normalise with running statistics.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    FeatureExtractor,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet<T> {
    config: ToyNetConfig,
    pub blocks: Vec<ConvBlock<T>>,
    pub head: Linear<T>,
}

#[derive(Debug, Clone)]
struct BlockTrace<T> {
    in_dims: (usize, usize, usize),
    cols: Array2<T>,
    bn: BnCache<T>,
    /// Post-ReLU output.
    out: Array2<T>,
    /// BN input, kept only when statistic gradients may be requested.
    bn_input: Option<Array2<T>>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    input_dims: (usize, usize, usize),
    blocks: Vec<BlockTrace<T>>,
    last_dims: (usize, usize, usize),
    pooled: Array2<T>,
    /// Per BN layer: channel mean and biased variance of the layer input
    /// over the current batch.
    pub batch_stats: Vec<(Array1<T>, Array1<T>)>,
}

impl<T> Trace<T> {
    pub fn batch(&self) -> usize {
        self.input_dims.0
    }
}

/// Parameter gradients, mirroring [`ToyNet::params_mut`] order.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub conv: Vec<Array2<T>>,
    pub gamma: Vec<Array1<T>>,
    pub beta: Vec<Array1<T>>,
    pub head_weight: Array2<T>,
    pub head_bias: Array1<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn slices(&self) -> Vec<(ParamGroup, &[T])> {
        let mut out = Vec::new();
        for i in 0..self.conv.len() {
            out.push((ParamGroup::FeatureExtractor, self.conv[i].as_slice().unwrap()));
            out.push((ParamGroup::FeatureExtractor, self.gamma[i].as_slice().unwrap()));
            out.push((ParamGroup::FeatureExtractor, self.beta[i].as_slice().unwrap()));
        }
        out.push((ParamGroup::Head, self.head_weight.as_slice().unwrap()));
        out.push((ParamGroup::Head, self.head_bias.as_slice().unwrap()));
        out
    }
}

/// A named tensor view used by checkpointing and fingerprinting.
pub struct NamedTensor<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

impl<T: Scalar> ToyNet<T> {
    pub fn new<R: Rng + ?Sized>(config: ToyNetConfig, rng: &mut R) -> Self {
        let mut blocks = Vec::with_capacity(config.widths.len());
        let mut in_ch = config.in_channels;
        for &w in &config.widths {
            blocks.push(ConvBlock {
                conv: Conv2d::new(in_ch, w, 3, 2, 1, rng),
                bn: BatchNorm2d::new(w),
            });
            in_ch = w;
        }
        let head = Linear::new(config.feature_dim(), config.num_classes, rng);
        Self {
            config,
            blocks,
            head,
        }
    }

    pub fn config(&self) -> &ToyNetConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn bn_layer_count(&self) -> usize {
        self.blocks.len()
    }

    /// Replaces the classification head with a freshly initialised one.
    pub fn reinit_head<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.head = Linear::new(self.config.feature_dim(), self.config.num_classes, rng);
    }

    pub fn check_input(&self, channels: usize, height: usize, width: usize) -> Result<(), String> {
        let c = &self.config;
        if channels != c.in_channels || height != c.image_size || width != c.image_size {
            return Err(format!(
                "{} expects {}x{}x{} inputs, got {}x{}x{}",
                c.architecture_id(),
                c.image_size,
                c.image_size,
                c.in_channels,
                height,
                width,
                channels
            ));
        }
        Ok(())
    }

    /// Runs the network without touching running statistics.
    ///
    /// With `keep_bn_inputs` the BN inputs are retained so that
    /// [`ToyNet::backward`] can accept gradients w.r.t. batch statistics.
    pub fn forward(&self, x: &FeatureMap<T>, mode: BnMode, keep_bn_inputs: bool) -> (Array2<T>, Trace<T>) {
        let input_dims = (x.batch, x.height, x.width);
        let mut traces = Vec::with_capacity(self.blocks.len());
        let mut stats = Vec::with_capacity(self.blocks.len());
        let mut current: Option<FeatureMap<T>> = None;
        for block in &self.blocks {
            let input = current.as_ref().unwrap_or(x);
            let in_dims = (input.batch, input.height, input.width);
            let (z, cols) = block.conv.forward(input);
            let (mean, var) = channel_stats(&z.data);
            let (mut y, cache) = match mode {
                BnMode::Train => block.bn.normalize(&z.data, &mean, &var, true),
                BnMode::Eval => block.bn.normalize(
                    &z.data,
                    &block.bn.running_mean,
                    &block.bn.running_var,
                    false,
                ),
            };
            y.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
            let out = FeatureMap::new(y, z.batch, z.height, z.width);
            traces.push(BlockTrace {
                in_dims,
                cols,
                bn: cache,
                out: out.data.clone(),
                bn_input: keep_bn_inputs.then_some(z.data),
            });
            stats.push((mean, var));
            current = Some(out);
        }
        let last = current.as_ref().unwrap_or(x);
        let last_dims = (last.batch, last.height, last.width);
        let pooled = global_average_pool(last);
        let logits = self.head.forward(&pooled);
        (
            logits,
            Trace {
                input_dims,
                blocks: traces,
                last_dims,
                pooled,
                batch_stats: stats,
            },
        )
    }

    /// Training-mode forward that also folds the batch statistics into the
    /// running averages.
    pub fn forward_train(&mut self, x: &FeatureMap<T>) -> (Array2<T>, Trace<T>) {
        let (logits, trace) = self.forward(x, BnMode::Train, false);
        for ((block, bt), (mean, var)) in self
            .blocks
            .iter_mut()
            .zip(&trace.blocks)
            .zip(&trace.batch_stats)
        {
            block.bn.update_running(mean, var, bt.out.ncols());
        }
        (logits, trace)
    }

    pub fn logits_eval(&self, x: &FeatureMap<T>) -> Array2<T> {
        self.forward(x, BnMode::Eval, false).0
    }

    /// Backpropagates `dlogits` (and optional gradients w.r.t. each BN
    /// layer's batch mean and variance) through the traced forward pass.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        dlogits: &Array2<T>,
        stat_grads: Option<&[(Array1<T>, Array1<T>)]>,
        input_grad: bool,
    ) -> (Gradients<T>, Option<FeatureMap<T>>) {
        let (dpooled, head_weight, head_bias) = self.head.backward(&trace.pooled, dlogits);
        let (b, h, w) = trace.last_dims;
        let mut grad = global_average_pool_backward(&dpooled, b, h, w);

        let n_blocks = self.blocks.len();
        let mut conv = vec![Array2::zeros((0, 0)); n_blocks];
        let mut gamma = vec![Array1::zeros(0); n_blocks];
        let mut beta = vec![Array1::zeros(0); n_blocks];
        for i in (0..n_blocks).rev() {
            let block = &self.blocks[i];
            let bt = &trace.blocks[i];
            let mut dy = grad.data;
            dy.zip_mut_with(&bt.out, |d, &o| {
                if o <= T::zero() {
                    *d = T::zero();
                }
            });
            let (mut dz, dg, db) = block.bn.backward(&bt.bn, &dy);
            if let Some(sg) = stat_grads {
                let z = bt
                    .bn_input
                    .as_ref()
                    .expect("forward must keep BN inputs for statistic gradients");
                add_stat_gradient(&mut dz, z, &trace.batch_stats[i], &sg[i]);
            }
            let need_dx = i > 0 || input_grad;
            let (dw, dx) = block.conv.backward(&dz, &bt.cols, bt.in_dims, need_dx);
            conv[i] = dw;
            gamma[i] = dg;
            beta[i] = db;
            grad = match dx {
                Some(dx) => dx,
                None => FeatureMap::zeros(0, 0, 0, 0),
            };
        }
        let dx = input_grad.then_some(grad);
        (
            Gradients {
                conv,
                gamma,
                beta,
                head_weight,
                head_bias,
            },
            dx,
        )
    }

    /// Trainable parameters in a fixed order (per block: conv weight, BN
    /// gamma, BN beta; then head weight and bias).
    pub fn params_mut(&mut self) -> Vec<(ParamGroup, &mut [T])> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            out.push((ParamGroup::FeatureExtractor, block.conv.weight.as_slice_mut().unwrap()));
            out.push((ParamGroup::FeatureExtractor, block.bn.gamma.as_slice_mut().unwrap()));
            out.push((ParamGroup::FeatureExtractor, block.bn.beta.as_slice_mut().unwrap()));
        }
        out.push((ParamGroup::Head, self.head.weight.as_slice_mut().unwrap()));
        out.push((ParamGroup::Head, self.head.bias.as_slice_mut().unwrap()));
        out
    }

    /// Parameters and BN buffers under stable dotted paths.
    pub fn named_tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            let c = &block.conv;
            out.push(NamedTensor {
                name: format!("blocks.{i}.conv.weight"),
                shape: vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                data: c.weight.as_slice().unwrap(),
            });
            let bn = &block.bn;
            for (suffix, arr) in [
                ("weight", &bn.gamma),
                ("bias", &bn.beta),
                ("running_mean", &bn.running_mean),
                ("running_var", &bn.running_var),
            ] {
                out.push(NamedTensor {
                    name: format!("blocks.{i}.bn.{suffix}"),
                    shape: vec![arr.len()],
                    data: arr.as_slice().unwrap(),
                });
            }
        }
        out.push(NamedTensor {
            name: "head.weight".into(),
            shape: vec![self.head.weight.nrows(), self.head.weight.ncols()],
            data: self.head.weight.as_slice().unwrap(),
        });
        out.push(NamedTensor {
            name: "head.bias".into(),
            shape: vec![self.head.bias.len()],
            data: self.head.bias.as_slice().unwrap(),
        });
        out
    }

    /// Mutable slice for a tensor named as in [`ToyNet::named_tensors`].
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        if let Some(rest) = name.strip_prefix("head.") {
            return match rest {
                "weight" => self.head.weight.as_slice_mut(),
                "bias" => self.head.bias.as_slice_mut(),
                _ => None,
            };
        }
        let rest = name.strip_prefix("blocks.")?;
        let (idx, field) = rest.split_once('.')?;
        let block = self.blocks.get_mut(idx.parse::<usize>().ok()?)?;
        match field {
            "conv.weight" => block.conv.weight.as_slice_mut(),
            "bn.weight" => block.bn.gamma.as_slice_mut(),
            "bn.bias" => block.bn.beta.as_slice_mut(),
            "bn.running_mean" => block.bn.running_mean.as_slice_mut(),
            "bn.running_var" => block.bn.running_var.as_slice_mut(),
            _ => None,
        }
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ToyNet<U> {
        let conv = |a: &Array2<T>| a.mapv(|v| U::of(v.as_f64()));
        let vec = |a: &Array1<T>| a.mapv(|v| U::of(v.as_f64()));
        ToyNet {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    conv: Conv2d {
                        weight: conv(&b.conv.weight),
                        in_channels: b.conv.in_channels,
                        out_channels: b.conv.out_channels,
                        kernel: b.conv.kernel,
                        stride: b.conv.stride,
                        padding: b.conv.padding,
                    },
                    bn: BatchNorm2d {
                        gamma: vec(&b.bn.gamma),
                        beta: vec(&b.bn.beta),
                        running_mean: vec(&b.bn.running_mean),
                        running_var: vec(&b.bn.running_var),
                        momentum: U::of(b.bn.momentum.as_f64()),
                        eps: U::of(b.bn.eps.as_f64()),
                    },
                })
                .collect(),
            head: Linear {
                weight: conv(&self.head.weight),
                bias: vec(&self.head.bias),
            },
        }
    }
}

fn global_average_pool<T: Scalar>(x: &FeatureMap<T>) -> Array2<T> {
    let hw = x.spatial();
    let scale = T::one() / T::of(hw as f64);
    let mut out = Array2::zeros((x.batch, x.channels()));
    let src = x.data.as_slice().expect("standard layout");
    let row_len = x.batch * hw;
    for c in 0..x.channels() {
        for n in 0..x.batch {
            let s: T = src[c * row_len + n * hw..c * row_len + (n + 1) * hw]
                .iter()
                .copied()
                .sum();
            out[[n, c]] = s * scale;
        }
    }
    out
}

fn global_average_pool_backward<T: Scalar>(
    dpooled: &Array2<T>,
    batch: usize,
    h: usize,
    w: usize,
) -> FeatureMap<T> {
    let hw = h * w;
    let channels = dpooled.ncols();
    let scale = T::one() / T::of(hw as f64);
    let mut out = FeatureMap::zeros(channels, batch, h, w);
    let dst = out.data.as_slice_mut().unwrap();
    for c in 0..channels {
        for n in 0..batch {
            let g = dpooled[[n, c]] * scale;
            for v in &mut dst[c * batch * hw + n * hw..c * batch * hw + (n + 1) * hw] {
                *v = g;
            }
        }
    }
    out
}

/// Adds `dL/dz` for a loss depending on the batch mean and biased variance
/// of `z` per channel.
fn add_stat_gradient<T: Scalar>(
    dz: &mut Array2<T>,
    z: &Array2<T>,
    (mean, _var): &(Array1<T>, Array1<T>),
    (dmean, dvar): &(Array1<T>, Array1<T>),
) {
    let m = T::of(z.ncols() as f64);
    let two = T::of(2.0);
    for c in 0..z.nrows() {
        let a = dmean[c] / m;
        let b = two * dvar[c] / m;
        let mu = mean[c];
        let mut dr = dz.row_mut(c);
        for (d, &zv) in dr.iter_mut().zip(z.row(c).iter()) {
            *d += a + b * (zv - mu);
        }
    }
}
