//! Minimal differentiable-computation substrate: float32 tensors, the layer
//! set for the pose encoder and action denoisers, reverse-mode gradients, an
//! adaptive-moment optimizer, and a finite-difference gradient checker.
//!
//! Scope is deliberately narrow: no broadcasting beyond what the layers
//! need, float32 everywhere, deterministic given a seed.

pub mod checkpoint;
pub mod fdcheck;
pub mod optim;
pub mod tensor;
pub mod var;

pub use checkpoint::{load_checkpoint, params_digest, save_checkpoint, CheckpointError};
pub use fdcheck::finite_diff_check;
pub use optim::{AdamConfig, Binder, OptimError, ParamSet};
pub use tensor::{matmul as tensor_matmul, normal_sample, Tensor, TensorError};
pub use var::{
    add, add_bias, add_scalar, backward, concat_cols, conv1d_rows, dropout, embedding, film_rows,
    linear, matmul, maxpool_rows, mean_all, mish, mse, mul, relu, reshape, scale, scale_rows,
    slice_cols, softplus, square, sub, sum_all, tanh, upsample2_rows, Grads, Var,
};

use rand::Rng;

/// Kaiming-style uniform fan-in bound for a weight of shape [fan_in, fan_out].
pub fn init_linear(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let fan_in = shape[0] as f32;
    let bound = (1.0 / fan_in).sqrt();
    Tensor::uniform(shape, bound, rng)
}
