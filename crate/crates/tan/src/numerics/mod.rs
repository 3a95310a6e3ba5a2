//! Minimal differentiable tensor core.
//!
//! Everything the model needs and nothing more: rank-1/rank-2 tensors over
//! `f32` or `f64`, the forward primitives (matrix products, gates, squash,
//! masked softmax, losses), a record of applied operations that supports
//! reverse-mode gradient computation, and a central finite-difference
//! checker used as the gradient oracle throughout the test suite.

mod functions;
mod gradcheck;
mod tape;
mod tensor;

pub use functions::{
    masked_softmax, mse_loss, orthogonality_penalty, row_normalized, sigmoid, squash, NORM_GUARD,
};
pub use gradcheck::finite_difference_check;
pub use tape::{orthogonality_penalty_op, Gradients, Tape, ValueId};
pub use tensor::{Scalar, Tensor, TensorError};
