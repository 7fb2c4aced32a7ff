//! Dense CPU tensors, neural-network kernels and a gradient tape.
//!
//! The engine is generic over the element type ([`Scalar`]); training code
//! uses the `f64` aliases and inference benchmarks may use `f32`.

pub mod conv;
pub mod error;
pub mod gemm;
pub mod gradcheck;
pub mod norm;
pub mod pool;
pub mod scalar;
pub mod softmax;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, finite_diff_check_at};
pub use norm::{BatchNormConfig, BatchNormState, Mode};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
