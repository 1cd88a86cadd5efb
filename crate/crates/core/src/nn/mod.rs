//! A small trainable CNN with hand-written gradients, the synthetic task it is trained
//! on, and sparse-model inference.

mod dataset;
mod inference;
mod net;
mod ops;
mod params;
mod train;

pub use dataset::{make_synthetic_task, LabeledDataset, DATASET_MAGIC};
pub use inference::{ConvPath, SparseNetwork};
pub use net::{argmax, Architecture, Dims, Layer, ToyNet};
pub use ops::{
    conv_backward, conv_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward, softmax_cross_entropy,
};
pub use params::Params;
pub use train::{accuracy, epoch_batches, sgd_step, train, Classification, LrSchedule, Objective, Sgd, TrainConfig};
