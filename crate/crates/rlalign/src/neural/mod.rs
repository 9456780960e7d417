//! A small neural network engine: tensors, conv/batchnorm/dense layers with
//! explicit backward passes, the action-value network built from them, Adam,
//! and binary checkpoints.
//!
//! Everything is generic over [`Scalar`] so gradient tests can run the exact
//! production code path in f64.

mod adam;
mod checkpoint;
mod layers;
mod qnet;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    decode as decode_checkpoint, encode as encode_checkpoint, load_checkpoint, save_checkpoint,
    Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layers::{
    maxpool2, maxpool2_backward, relu, relu_backward, BatchNorm2d, Conv2d, Dense,
};
pub use qnet::{
    ConvSpec, DuelingAggregation, ForwardMode, FwdCache, GradSet, QNetwork, QNetworkConfig,
};
pub use tensor::{Scalar, TensorN};
