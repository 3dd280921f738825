//! Dense reverse-mode differentiation engine.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles in
//! insertion order, which is also a topological order. Gradients are
//! obtained with [`Tape::grad`], which walks the tape backwards once.
//! Tapes are rebuilt for every evaluation.

mod adam;
mod finite_diff;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use finite_diff::finite_diff_grad;
pub use tape::{Tape, Var};
pub use tensor::{global_norm, Tensor};

/// Failures raised by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AdError {
    #[error("tensor data has {actual} elements, shape requires {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("tensors of rank {0} are not supported")]
    UnsupportedRank(usize),
    #[error("tensor dimensions must be positive")]
    EmptyDimension,
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
    #[error("division by zero in `{op}`")]
    DivisionByZero { op: &'static str },
    #[error("argument outside the domain of `{op}`")]
    Domain { op: &'static str },
    #[error("gradient root must be a scalar, got {numel} elements")]
    NonScalarRoot { numel: usize },
    #[error("variable is not a leaf of this tape")]
    NotALeaf,
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
}
