//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records each forward op; [`Tape::backward`] walks it once in
//! reverse and is the end of its life. Parameters live outside the tape in a
//! [`ParamSet`] and are re-bound as leaves for every forward pass.

mod checkpoint;
mod gradcheck;
mod kernels;
mod param;
mod tape;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, BlockReport, GradCheckOptions, GradCheckReport};
pub use param::{adam_step, glorot_uniform, Adam, ParamSet, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use kernels::softplus;
