//! Tensors, layer kernels, reverse-mode gradients and the SGD optimizer.

mod batch;
pub mod gradcheck;
pub mod ops;
mod optim;
mod tape;
mod tensor;

pub use batch::{batch_gradients, scale_grads, SampleGrads};
pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use ops::{
    bce_loss, conv2d, fully_connected, global_avg_pool, maxpool2d, maxpool2d_window, relu, sigmoid,
    sigmoid_normalize, BCE_EPSILON,
};
pub use optim::{sgd_step, OptimizerConfig, Parameter};
pub use tape::{Grads, Tape, Var};
pub use tensor::{Scalar, Tensor};
