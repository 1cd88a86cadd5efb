//! SIMD-structured pruning.
//!
//! Weights are grouped `g` output channels at a time and pruned one group-column (a
//! *prune unit*) at a time, so every surviving column can be processed by a single
//! vector instruction. The crate provides the grouped-CSR kernel format and its
//! convolution, a piecewise-linear latency estimator built from measurements, the
//! latency-constrained projection, and an ADMM driver that trains a small CNN under a
//! latency budget.

pub mod admm;
pub mod error;
pub mod latency;
pub mod nn;
pub mod pruning;
pub mod scalar;
pub mod sparse_conv;
pub mod sparse_format;
pub mod verify;

pub use error::{DecodeError, Error, Result};
pub use scalar::Scalar;

pub type DenseKernelF32 = sparse_format::DenseKernel<f32>;
pub type DenseKernelF64 = sparse_format::DenseKernel<f64>;
pub type GroupedCsrKernelF32 = sparse_format::GroupedCsrKernel<f32>;
pub type GroupedCsrKernelF64 = sparse_format::GroupedCsrKernel<f64>;
pub type FeatureMapF32 = sparse_conv::FeatureMap<f32>;
pub type FeatureMapF64 = sparse_conv::FeatureMap<f64>;
pub type ParamsF32 = nn::Params<f32>;
pub type ParamsF64 = nn::Params<f64>;
pub type ToyNetF32 = nn::ToyNet<f32>;
pub type ToyNetF64 = nn::ToyNet<f64>;
pub type AdmmStateF32 = admm::AdmmState<f32>;
pub type AdmmStateF64 = admm::AdmmState<f64>;
