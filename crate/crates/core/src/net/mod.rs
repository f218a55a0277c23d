//! Small CNN classifier: 10C5-R-2S-20C5-R-2S-100F-R-10F, softmax output.

mod layers;
mod network;
mod tensor;
mod train;
mod weights;

use thiserror::Error;

pub use layers::{
    conv2d_backward, conv2d_forward, cross_entropy, cross_entropy_logits, dense_backward, dense_forward,
    guided_relu_backward, maxpool_backward, maxpool_forward, relu_backward, relu_forward, softmax,
    Conv2d, Dense, ParamGrad, KERNEL, PAD,
};
pub use network::{Architecture, Gradients, Layer, Network, ReluMode, Trace};
pub use tensor::Tensor;
pub use train::{evaluate, fit, EpochStats, Sample, TrainConfig, TrainReport, Trainer};
pub use weights::WEIGHTS_HEADER;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("input width {actual} does not match the network's {expected}")]
    Width { expected: usize, actual: usize },
    #[error("training diverged: non-finite loss {0}")]
    Divergence(f64),
    #[error("weights file: {0}")]
    Header(String),
    #[error("weights file, layer {layer}: {msg}")]
    Layer { layer: String, msg: String },
}
