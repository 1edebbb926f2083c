//! Dense `f64` tensors, a recording tape for reverse-mode gradients and the
//! Adam optimizer.
//!
//! Gradients produced by [`Tape::grad`] live on the same tape as the forward
//! pass, which makes penalties on input gradients trainable.

mod adam;
pub mod check;
mod error;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
