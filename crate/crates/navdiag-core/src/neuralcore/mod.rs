//! Minimal reverse-mode automatic differentiation, a fixed three-layer
//! perceptron, loss functions, SGD with gradient clipping, and a
//! finite-difference gradient checker.
//!
//! Everything runs on 64-bit floats and is deterministic: tapes replay in
//! recording order, dropout masks are derived from explicit seeds, and
//! parameter sets keep a stable insertion order for updates, checkpoints,
//! and gradient checks alike.

pub mod checkpoint;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use loss::{bce_loss, cross_entropy};
pub use mlp::{dropout_masks, mlp_forward, mlp_logits_taped, MlpParams, MlpVars};
pub use optim::{grad_check, sgd_step};
pub use params::ParamSet;
pub use tape::{sigmoid, softmax_vec, Tape, Var};
pub use tensor::Tensor;
