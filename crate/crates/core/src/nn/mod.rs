//! The MiniCNN model with hand-written backprop, its loss, optimizer,
//! learning-rate schedule, checkpoints and the epoch loop.

pub mod checkpoint;
pub mod gradcheck;
mod loss;
mod model;
mod optim;
mod schedule;
mod train;

pub use loss::{count_correct, softmax_cross_entropy};
pub use model::{
    Architecture, BackboneOutput, BlockCache, ConvBlock, HeadCache, Linear, MiniCnn, Param,
    ParamMut, Trace, HOOK_BLOCKS,
};
pub use optim::{sgd_momentum_step, Sgd, TrainConfig};
pub use schedule::cosine_lr;
pub use train::{evaluate, RunRecord, Trainer};
