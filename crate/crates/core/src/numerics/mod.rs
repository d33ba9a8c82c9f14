//! Differentiable NCHW tensor core.

pub mod fft;
mod gradcheck;
mod graph;
pub mod ops;
mod tensor;

pub use fft::{complex_l1, fft2, ifft2, ComplexTensor};
pub use gradcheck::{finite_diff, max_relative_error};
pub use graph::{DiffGraph, Gradients, Var};
pub use ops::{Activation, ConvSpec, Padding};
pub use tensor::{Shape, Tensor};
