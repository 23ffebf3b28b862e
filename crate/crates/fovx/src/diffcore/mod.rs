//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles as a
//! Wengert list; [`Var::backward`] replays the list in reverse and leaves
//! gradients on the `requires_grad` leaves. Tapes are cheap and rebuilt for
//! every optimization step. A tape is single-threaded by design; data
//! parallelism lives inside the kernels (see [`crate::exec`]) and across
//! independent tapes.
//!
//! Numerics policy: training runs at `f32`, gradient checking at `f64`
//! ([`grad_check`]). Every op validates its output for NaN/Inf and fails
//! loudly instead of letting poison propagate. Division clamps denominator
//! magnitude at [`DIV_EPSILON`].

mod gradcheck;
mod ops;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport, InputReport};
pub use ops::concat;
pub use scalar::{Dtype, Scalar};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Smallest denominator magnitude `div` will divide by.
pub const DIV_EPSILON: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: operands belong to different tapes")]
    TapeMismatch { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward already ran on this tape; call Tape::reset_grads first")]
    DoubleBackward,
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, DiffError>;
