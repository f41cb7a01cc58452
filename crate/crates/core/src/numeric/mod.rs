//! Dense `f64` linear algebra, differentiable primitives, Adam and a
//! finite-difference gradient checker.

mod gradcheck;
mod matrix;
pub(crate) mod ops;
pub(crate) mod optim;
mod rng;

pub use gradcheck::{grad_check, jitter_params, GradCheckReport, SKIP_THRESHOLD};
pub use matrix::Matrix;
pub use ops::{
    cross_entropy_loss, gelu, gelu_grad, layer_norm, layer_norm_backward, layer_norm_forward,
    log_softmax, row_softmax, softmax_backward, LayerNormCache, Mask,
};
pub use optim::{adam_step, Adam, AdamConfig, AdamState, Parameter, Params};
pub use rng::{Rng, RngState};
