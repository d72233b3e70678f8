//! Dense 64-bit tensors with tape-based reverse-mode differentiation.

pub mod checkpoint;
mod dense;
mod gemm;
mod optim;
mod tape;

pub use dense::Tensor;
pub use optim::{adamw_step, AdamW};
pub use tape::{Tape, Var, LAYER_NORM_EPS};

pub(crate) use gemm::matmul as gemm_matmul;
pub(crate) use tape::softmax_in_place;
