//! Differentiable layers recorded on a [`Tape`](crate::tensor::Tape).
//!
//! Layers are free functions over explicit parameter tensors; the model
//! owns the parameters and binds them to a tape for each pass.

mod activation;
mod conv;
mod norm;
mod pool;

pub use activation::{selu, sigmoid, sigmoid_scalar, SELU_ALPHA, SELU_LAMBDA};
pub use conv::{conv1d, conv_output_len, linear, ConvOptions};
pub use norm::{batch_norm1d, BatchNormConfig, Mode, RunningStats};
pub use pool::{global_avg_pool, has_near_tie, maxpool1d};
