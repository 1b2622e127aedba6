//! Dense `f64` tensors with tape-based reverse-mode differentiation.

pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, relative_error, DEFAULT_STEP};
pub use tape::{BatchStats, Tape, Var};
pub use tensor::Tensor;
