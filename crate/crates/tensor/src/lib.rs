//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! The engine is deliberately small: it covers the operations needed by
//! convolutional encoder/decoder networks, image warping and windowed
//! statistics, in both `f32` and `f64`. Convolutions are lowered to
//! im2col + GEMM; batch items are processed through [`exec`], which uses
//! rayon when the `parallel` feature is enabled.

mod error;
pub mod exec;
pub mod nn;
mod ops;
pub mod optim;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use real::Real;
pub use tensor::{Gradients, Tensor};
