//! Dense `f64` tensors, layer primitives and tape-based reverse-mode
//! differentiation.

mod gradcheck;
pub mod ops;
mod optim;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, DEFAULT_STEP};
pub use ops::{matmul, maxpool_time, pooled_len, softmax_rows};
pub use optim::{make_optimizer, Adam, Optimizer, OptimizerKind, Sgd};
pub use param::{Param, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
