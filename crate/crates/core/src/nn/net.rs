use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{
    conv_backward, conv_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward, softmax_cross_entropy,
};
use super::params::Params;
use crate::error::{Error, Result};
use crate::latency::LayerSpec;
use crate::scalar::Scalar;
use crate::sparse_conv::{ConvGeometry, FeatureMap};
use crate::sparse_format::{compress, decompress, DenseKernel, KernelShape, LayerKind, SparseLayer, SparseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// Square `kernel × kernel` convolution with bias.
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    /// 2×2 max pooling, stride 2.
    MaxPool2,
    Flatten,
    /// Fully-connected layer with bias; its input must be flattened.
    Fc {
        outputs: usize,
    },
}

/// Input/output extent of one layer as `(channels, height, width)`.
pub type Dims = (usize, usize, usize);

/// Layer sequence with inferred shapes. Conv and fc layers are the prunable ones and
/// own, in order, the kernels of a [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    input: Dims,
    layers: Vec<Layer>,
    dims: Vec<Dims>,
    prunable: Vec<(usize, KernelShape, ConvGeometry)>,
}

impl Architecture {
    pub fn new(input: Dims, layers: Vec<Layer>) -> Result<Self> {
        if input.0 == 0 || input.1 == 0 || input.2 == 0 {
            return Err(Error::Dimension("input dimensions must be >= 1".into()));
        }
        let mut dims = Vec::with_capacity(layers.len());
        let mut prunable = Vec::new();
        let mut cur = input;
        for (i, layer) in layers.iter().enumerate() {
            cur = match *layer {
                Layer::Conv { out_channels, kernel, stride, pad } => {
                    let shape = KernelShape::new(out_channels, cur.0, kernel, kernel)?;
                    let geom = ConvGeometry::new(stride, pad)?;
                    let (oh, ow) = geom.output_dims(cur.1, cur.2, kernel, kernel)?;
                    prunable.push((i, shape, geom));
                    (out_channels, oh, ow)
                }
                Layer::Relu => cur,
                Layer::MaxPool2 => {
                    if cur.1 < 2 || cur.2 < 2 {
                        return Err(Error::Dimension(format!("layer {i}: cannot pool a {}x{} map", cur.1, cur.2)));
                    }
                    (cur.0, cur.1 / 2, cur.2 / 2)
                }
                Layer::Flatten => (cur.0 * cur.1 * cur.2, 1, 1),
                Layer::Fc { outputs } => {
                    if (cur.1, cur.2) != (1, 1) {
                        return Err(Error::Dimension(format!("layer {i}: fully-connected input must be flattened")));
                    }
                    prunable.push((i, KernelShape::fully_connected(outputs, cur.0)?, ConvGeometry::default()));
                    (outputs, 1, 1)
                }
            };
            dims.push(cur);
        }
        if prunable.is_empty() {
            return Err(Error::Dimension("network has no conv or fc layer".into()));
        }
        Ok(Self { input, layers, dims, prunable })
    }

    /// conv(16,1,3,3)-relu-pool → conv(32,16,3,3)-relu-pool → fc(classes) on 1×16×16.
    pub fn toy(classes: usize) -> Self {
        Self::toy_with_channels(classes, 16, 32)
    }

    /// Like [`Architecture::toy`] with 18 first-layer channels, so `g = 4` leaves a tail
    /// group of 2.
    pub fn toy_tail(classes: usize) -> Self {
        Self::toy_with_channels(classes, 18, 32)
    }

    fn toy_with_channels(classes: usize, first: usize, second: usize) -> Self {
        Self::new(
            (1, 16, 16),
            vec![
                Layer::Conv { out_channels: first, kernel: 3, stride: 1, pad: 1 },
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Conv { out_channels: second, kernel: 3, stride: 1, pad: 1 },
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Flatten,
                Layer::Fc { outputs: classes },
            ],
        )
        .expect("toy architecture is well formed")
    }

    /// Rebuilds the layer sequence implied by a stored model: every conv is followed by
    /// relu and 2×2 pooling, the first fc is preceded by a flatten, and consecutive fc
    /// layers are separated by relu.
    pub fn from_model(input: Dims, model: &SparseModel) -> Result<Self> {
        let mut layers = Vec::new();
        let mut seen_fc = false;
        for layer in &model.layers {
            let shape = layer.kernel.shape();
            match layer.kind {
                LayerKind::Conv => {
                    if seen_fc {
                        return Err(Error::Dimension("conv layer after a fully-connected layer".into()));
                    }
                    if shape.kernel_h != shape.kernel_w {
                        return Err(Error::Dimension(format!("non-square kernel {shape}")));
                    }
                    layers.extend([
                        Layer::Conv {
                            out_channels: shape.out_channels,
                            kernel: shape.kernel_h,
                            stride: layer.stride,
                            pad: layer.pad,
                        },
                        Layer::Relu,
                        Layer::MaxPool2,
                    ]);
                }
                LayerKind::FullyConnected => {
                    layers.push(if seen_fc { Layer::Relu } else { Layer::Flatten });
                    layers.push(Layer::Fc { outputs: shape.out_channels });
                    seen_fc = true;
                }
            }
        }
        let arch = Self::new(input, layers)?;
        for ((_, expected, _), layer) in arch.prunable.iter().zip(&model.layers) {
            if *expected != layer.kernel.shape() {
                return Err(Error::Dimension(format!(
                    "stored kernel {} does not fit the inferred shape {expected}",
                    layer.kernel.shape()
                )));
            }
        }
        Ok(arch)
    }

    pub fn input(&self) -> Dims {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_dims(&self) -> Dims {
        *self.dims.last().unwrap_or(&self.input)
    }

    pub fn classes(&self) -> usize {
        let (c, h, w) = self.output_dims();
        c * h * w
    }

    pub fn prunable_count(&self) -> usize {
        self.prunable.len()
    }

    pub fn kernel_shapes(&self) -> Vec<KernelShape> {
        self.prunable.iter().map(|p| p.1).collect()
    }

    /// Benchmark descriptions of the prunable layers, named `conv{i}` / `fc{i}`.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.prunable
            .iter()
            .enumerate()
            .map(|(j, &(i, kernel, geom))| {
                let input = if i == 0 { self.input } else { self.dims[i - 1] };
                let (kind, prefix) = match self.layers[i] {
                    Layer::Fc { .. } => (LayerKind::FullyConnected, "fc"),
                    _ => (LayerKind::Conv, "conv"),
                };
                LayerSpec { name: format!("{prefix}{j}"), kind, kernel, input_h: input.1, input_w: input.2, geom }
            })
            .collect()
    }

    /// He-uniform kernels, zero biases.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Params<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernels = self
            .prunable
            .iter()
            .map(|&(_, shape, _)| {
                let bound = (6.0 / shape.columns() as f64).sqrt();
                DenseKernel::from_fn(shape, |_, _, _, _| T::of(rng.gen_range(-bound..bound)))
            })
            .collect();
        let biases = self.prunable.iter().map(|p| vec![T::zero(); p.1.out_channels]).collect();
        Params { kernels, biases }
    }

    pub fn check_params<T: Scalar>(&self, params: &Params<T>) -> Result<()> {
        if params.kernels.len() != self.prunable.len() || params.biases.len() != self.prunable.len() {
            return Err(Error::Dimension(format!(
                "{} kernels / {} biases for {} prunable layers",
                params.kernels.len(),
                params.biases.len(),
                self.prunable.len()
            )));
        }
        for ((_, shape, _), (k, b)) in self.prunable.iter().zip(params.kernels.iter().zip(&params.biases)) {
            if k.shape() != *shape || b.len() != shape.out_channels {
                return Err(Error::Dimension(format!("parameter shape {} does not match layer {shape}", k.shape())));
            }
        }
        Ok(())
    }

    fn check_input<T: Scalar>(&self, x: &FeatureMap<T>) -> Result<()> {
        if (x.channels(), x.height(), x.width()) != self.input {
            return Err(Error::Dimension(format!(
                "input {}x{}x{} does not match network input {:?}",
                x.channels(),
                x.height(),
                x.width(),
                self.input
            )));
        }
        Ok(())
    }

    /// Class scores for one sample.
    pub fn forward<T: Scalar>(&self, params: &Params<T>, x: &FeatureMap<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.forward_cached(params, x).0.pop().unwrap().into_values())
    }

    /// Activations after every layer (index 0 is the input) plus pooling argmaxes.
    fn forward_cached<T: Scalar>(
        &self,
        params: &Params<T>,
        x: &FeatureMap<T>,
    ) -> (Vec<FeatureMap<T>>, Vec<Vec<usize>>) {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut argmaxes = Vec::new();
        acts.push(x.clone());
        let mut p = 0;
        for layer in &self.layers {
            let cur = acts.last().unwrap();
            let next = match layer {
                Layer::Conv { .. } | Layer::Fc { .. } => {
                    let geom = self.prunable[p].2;
                    let out = conv_forward(cur, &params.kernels[p], &params.biases[p], geom);
                    p += 1;
                    out
                }
                Layer::Relu => relu_forward(cur),
                Layer::MaxPool2 => {
                    let (out, arg) = maxpool_forward(cur);
                    argmaxes.push(arg);
                    out
                }
                Layer::Flatten => cur.clone().flattened(),
            };
            acts.push(next);
        }
        (acts, argmaxes)
    }

    /// Cross-entropy loss of one sample and its exact gradient.
    pub fn sample_loss_grad<T: Scalar>(&self, params: &Params<T>, x: &FeatureMap<T>, label: usize) -> (T, Params<T>) {
        let (acts, argmaxes) = self.forward_cached(params, x);
        let (loss, dlogits) = softmax_cross_entropy(acts.last().unwrap().values(), label);
        let mut grads = Params::zeros_like(params);
        let (c, h, w) = self.output_dims();
        let mut grad = FeatureMap::new(c, h, w, dlogits).expect("logit dims");
        let mut p = self.prunable.len();
        let mut pool = argmaxes.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            grad = match layer {
                Layer::Conv { .. } | Layer::Fc { .. } => {
                    p -= 1;
                    let (gk, gb, gi) = conv_backward(input, &params.kernels[p], self.prunable[p].2, &grad);
                    grads.kernels[p] = gk;
                    grads.biases[p] = gb;
                    gi
                }
                Layer::Relu => relu_backward(input, &grad),
                Layer::MaxPool2 => {
                    pool -= 1;
                    maxpool_backward(input, &argmaxes[pool], &grad)
                }
                Layer::Flatten => FeatureMap::new(input.channels(), input.height(), input.width(), grad.into_values())
                    .expect("flatten dims"),
            };
        }
        (loss, grads)
    }
}

/// A network architecture together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet<T> {
    pub arch: Architecture,
    pub params: Params<T>,
}

impl<T: Scalar> ToyNet<T> {
    pub fn new(arch: Architecture, params: Params<T>) -> Result<Self> {
        arch.check_params(&params)?;
        Ok(Self { arch, params })
    }

    pub fn init(arch: Architecture, seed: u64) -> Self {
        let params = arch.init_params(seed);
        Self { arch, params }
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<Vec<T>> {
        self.arch.forward(&self.params, x)
    }

    pub fn predict(&self, x: &FeatureMap<T>) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }
}

impl ToyNet<f32> {
    /// Stores every prunable layer in grouped-CSR form.
    pub fn to_sparse_model(&self, group_size: usize) -> SparseModel {
        let layers = self
            .arch
            .layer_specs()
            .into_iter()
            .zip(self.params.kernels.iter().zip(&self.params.biases))
            .map(|(spec, (kernel, bias))| SparseLayer {
                kind: spec.kind,
                stride: spec.geom.stride,
                pad: spec.geom.pad,
                kernel: compress(kernel, group_size),
                bias: Some(bias.clone()),
            })
            .collect();
        SparseModel { layers }
    }

    pub fn from_sparse_model(input: Dims, model: &SparseModel) -> Result<Self> {
        let arch = Architecture::from_model(input, model)?;
        let params = Params {
            kernels: model.layers.iter().map(|l| decompress(&l.kernel)).collect(),
            biases: model
                .layers
                .iter()
                .map(|l| l.bias.clone().unwrap_or_else(|| vec![0.0; l.kernel.shape().out_channels]))
                .collect(),
        };
        Self::new(arch, params)
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
