//! Dense row-major tensors and a tape-based reverse-mode differentiator.
//!
//! Every numerical primitive used by the reconstruction model lives here:
//! convolutions, layer normalization, batched matmul, softmax, trilinear
//! sampling and resampling, sinusoidal feature expansion and the shape
//! plumbing between them. All kernels are generic over [`Scalar`] so the same
//! code runs in `f32` for training and in `f64` for gradient checking.

mod error;
pub mod gradcheck;
pub mod ops;
mod optim;
mod param;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use optim::{adam_update, Adam, AdamConfig};
pub use param::{Bindings, ParameterStore};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
