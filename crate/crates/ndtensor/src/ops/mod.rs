//! Primitive kernels. Each submodule adds recording methods to [`Tape`] and
//! keeps the forward and backward kernels side by side.
//!
//! [`Tape`]: crate::Tape

pub mod conv;
pub mod elementwise;
pub mod encode;
pub mod linalg;
pub mod norm;
pub mod sample;
pub mod shape;

pub use crate::tape::UpsampleMode;
