//! Residual CNN family: specs, builders and checkpoints.

mod checkpoint;
mod network;
mod spec;

pub use checkpoint::{
    decode, encode, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, FORMAT_VERSION, MAGIC,
};
pub use network::{count_parameters, ForwardCtx, NormLayer, ParamStore, Parameter, ResidualBlock, Network};
pub use spec::{scaled_channels, BlockSpec, ModelSpec, MIN_INPUT_SIZE, STUDENT_WIDTHS, TEACHER_WIDTH};
