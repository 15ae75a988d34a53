//! ReplaceBlock: attention-guided regularization that overwrites structured
//! feature-map regions with background features of the same image, together
//! with the small CNN, data pipeline and experiment tooling around it.
//!
//! Everything runs on the CPU in `f32` with tensors laid out `(N, C, H, W)`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cam;
pub mod data;
pub mod error;
pub mod experiment;
pub mod mask;
pub mod nn;
pub mod regularize;
pub mod rng;
pub mod tensor;

pub use cam::{AttentionMap, BinaryMask, Resolution};
pub use data::{Dataset, LabeledImage, Normalization};
pub use error::{Error, Result};
pub use experiment::ExperimentConfig;
pub use mask::{MaskGenConfig, SamplingMode, SeedMap};
pub use nn::{Architecture, MiniCnn, RunRecord, TrainConfig};
pub use regularize::{Mode, RegularizerKind, ReplaceBlockConfig, Schedule};
pub use tensor::{Map2d, Shape, Tensor};
