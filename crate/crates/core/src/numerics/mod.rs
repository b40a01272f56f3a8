//! Tensors, reverse-mode autodiff, and the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use adam::{learning_rate, AdamConfig, OptimizerState};
pub use gradcheck::{gradient_check, GradCheck};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::{argmax, log_sum_exp, softmax, Real, Tensor};
