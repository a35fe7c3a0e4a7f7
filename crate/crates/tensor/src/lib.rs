//! Dense matrices and a reverse-mode autodiff tape.
//!
//! The tape supports gradients of gradients, which the gradient-penalty
//! critic loss requires. Everything is generic over [`Scalar`] so the same
//! network code runs in `f32` for training and `f64` for numerical checks.

mod matrix;
pub mod nn;
mod scalar;
mod tape;

pub use matrix::Matrix;
pub use scalar::Scalar;
pub use tape::{Tape, Var};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("buffer of length {len} cannot hold a {rows}x{cols} matrix")]
    Length {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("ragged rows: expected {expected} columns, found {found}")]
    Ragged { expected: usize, found: usize },
    #[error("expected {expected} parameter tensors, found {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("parameter `{name}` does not match the network layout")]
    ParamMismatch { name: String },
}
