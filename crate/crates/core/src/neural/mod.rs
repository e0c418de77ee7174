//! A small neural-network core: dense, LSTM, and 1-D convolution layers with
//! exact backpropagation, Adam, checkpoints, and gradient checking.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod network;
mod spec;
mod tensor;

use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointMeta, Precision, CHECKPOINT_MAGIC};
pub use gradcheck::{check_gradients, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use network::{clip_global_norm, ForwardCache, Network};
pub use spec::{Activation, LayerSpec, NetworkSpec, ParamBlock, Shape};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("forward cache is stale: parameters changed since it was recorded")]
    StaleCache,
    #[error("non-finite gradient in block {block} (parameter {index})")]
    NonFiniteGradient { block: String, index: usize },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
