//! Knowledge distillation for lightweight residual CNNs with an adaptive
//! temperature schedule and Mixup/CutMix augmentation.
//!
//! The numerical core is generic over [`atms_tensor::Scalar`]; training
//! runs in `f64` and the aliases below name the common instantiations.

pub mod augment;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod model;
pub mod train;

pub use atms_tensor::{self as tensor, Scalar, Tensor};
pub use error::{CheckpointError, KdError, Result};

pub type Network64 = model::Network<f64>;
pub type Network32 = model::Network<f32>;
pub type Checkpoint64 = model::Checkpoint<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type MixedBatch64 = augment::MixedBatch<f64>;
