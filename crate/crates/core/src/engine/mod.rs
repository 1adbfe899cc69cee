//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! Every forward pass records onto a fresh [`Tape`]; parameters enter as
//! leaves, inputs as constants. [`Tape::backward`] walks the recorded nodes
//! once in reverse order and accumulates gradients into the leaves.

mod scalar;
mod tape;
mod tensor;

pub mod gradcheck;

pub use scalar::Scalar;
pub use tape::{BinaryKind, ReduceKind, Tape, UnaryKind, Var};
pub use tensor::Tensor;
