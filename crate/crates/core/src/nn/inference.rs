use super::net::{argmax, Architecture, Dims, Layer};
use super::ops::{maxpool_forward, relu_forward};
use crate::error::Result;
use crate::sparse_conv::{conv_dense_reference, conv_sparse, conv_sparse_vectorized_threads, FeatureMap};
use crate::sparse_format::{decompress, DenseKernel, SparseModel};

/// Which convolution routine runs the conv/fc layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvPath {
    /// Dense oracle on the decompressed kernels.
    Dense,
    /// Scalar grouped-CSR path.
    Scalar,
    /// Register-tiled grouped-CSR path on the given number of workers.
    Vectorized { threads: usize },
}

/// Inference over a stored sparse model.
#[derive(Debug, Clone)]
pub struct SparseNetwork {
    arch: Architecture,
    model: SparseModel,
    dense: Vec<DenseKernel<f32>>,
}

impl SparseNetwork {
    pub fn new(input: Dims, model: SparseModel) -> Result<Self> {
        let arch = Architecture::from_model(input, &model)?;
        let dense = model.layers.iter().map(|l| decompress(&l.kernel)).collect();
        Ok(Self { arch, model, dense })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn model(&self) -> &SparseModel {
        &self.model
    }

    pub fn forward(&self, x: &FeatureMap<f32>, path: ConvPath) -> Result<Vec<f32>> {
        let mut cur = x.clone();
        let mut p = 0;
        for layer in self.arch.layers() {
            cur = match layer {
                Layer::Conv { .. } | Layer::Fc { .. } => {
                    let l = &self.model.layers[p];
                    let geom = crate::sparse_conv::ConvGeometry::new(l.stride, l.pad)?;
                    let bias = l.bias.as_deref();
                    p += 1;
                    match path {
                        ConvPath::Dense => conv_dense_reference(&cur, &self.dense[p - 1], bias, geom)?,
                        ConvPath::Scalar => conv_sparse(&cur, &l.kernel, bias, geom)?,
                        ConvPath::Vectorized { threads } => {
                            conv_sparse_vectorized_threads(&cur, &l.kernel, bias, geom, threads)?
                        }
                    }
                }
                Layer::Relu => relu_forward(&cur),
                Layer::MaxPool2 => maxpool_forward(&cur).0,
                Layer::Flatten => cur.flattened(),
            };
        }
        Ok(cur.into_values())
    }

    pub fn predict(&self, x: &FeatureMap<f32>, path: ConvPath) -> Result<usize> {
        Ok(argmax(&self.forward(x, path)?))
    }
}
