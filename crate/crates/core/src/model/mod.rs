//! The revised ConvNeXt network: stem, four residual stages joined by
//! max-pool downsampling, and a one-logit head.

mod block;
mod config;
mod network;

pub use block::{block_forward, meca_forward, res2net_split_forward, BlockWeights, ConvRef};
pub use config::{meca_kernel_size, ModelConfig};
pub use network::{Bound, Model, ParamKind, Parameter, StatsBuffer};

use crate::tensor::{Shape, TensorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("waveform batch must be (B, 1, L), got {0}")]
    Input(Shape),
    #[error("input of length {len} is shorter than the minimum {min}")]
    TooShort { len: usize, min: usize },
    #[error("{layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: TensorError,
    },
}

impl ModelError {
    pub(crate) fn at(layer: impl Into<String>) -> impl FnOnce(TensorError) -> ModelError {
        let layer = layer.into();
        move |source| ModelError::Layer { layer, source }
    }
}
