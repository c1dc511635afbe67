//! Toy quantization-aware training.
//!
//! A small fully connected network is trained on 2-D synthetic data with
//! fake-quantized weights in the forward pass and a straight-through
//! gradient in the backward pass. Each step samples one precision from the
//! configured set, so a single model learns to serve all of them. Trained
//! models can then be evaluated with weights quantized directly to the
//! target precision or quantized at a higher precision and truncated.

mod data;
mod mlp;
mod train;

pub use data::{DatasetSpec, SyntheticDataset};
pub use mlp::{
    backward, forward, softmax_cross_entropy, DenseLayer, ForwardCache, Gradients, MlpModel,
    WeightMode,
};
pub use train::{evaluate, predict, train, train_on, TrainConfig, TrainLogRow, TrainOutcome};
