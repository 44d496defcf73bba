//! Dense row-major `f32` tensors with a reverse-mode gradient tape.
//!
//! Values are computed eagerly by the methods on [`Tensor`]. A [`Tape`]
//! records the same operations through [`Var`] handles so that
//! [`Tape::backward`] can propagate gradients from a scalar loss back to
//! every recorded input. Reductions, softmax normalizers and layer-norm
//! statistics accumulate in `f64`.

mod error;
mod io;
pub mod gradcheck;
pub mod kernels;
mod ops;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use io::{read_blob, write_blob};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Fill value used by `masked_fill`. Large and finite so that softmax and
/// its backward pass never produce NaN.
pub const MASK_VALUE: f32 = -1e9;

/// Epsilon added to the variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
