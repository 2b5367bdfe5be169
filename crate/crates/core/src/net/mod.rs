//! Minimal dense-tensor network engine for the SE-ResNet classifier:
//! conv2d, batchnorm, ReLU, pooling, squeeze-and-excitation blocks, an
//! angular-margin softmax head, reverse-mode gradients, Adam, and a
//! deterministic training loop with checkpointing.

mod block;
mod checkpoint;
mod layers;
mod loss;
mod model;
mod optim;
mod tensor;
mod train;

pub use block::SeBlock;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use layers::{global_avg_pool, BatchNorm2d, Conv2d, Linear, MaxPool2d, Relu};
pub use loss::{asoftmax_loss, AngularHead};
pub use model::{Senet, SenetConfig, StageSpec};
pub use optim::Adam;
pub use tensor::{Element, Tensor4};
pub use train::{
    score_trials, train, EpochLog, TrainConfig, TrainOutcome, TrainerState, CLASS_BONAFIDE,
    CLASS_SPOOF,
};
