//! Minimal reverse-mode differentiation for the layer set used by the
//! convex regularizer network.

mod kernels;
mod network;
mod tape;
mod tensor;

pub use network::{
    eval_batch, eval_forward, finite_difference_check, finite_difference_check_fn, forward_on_tape, grad_input, grad_input_batch,
    grad_input_fn, grad_params, infer_shapes, load_params, param_slots, relative_error, LayerKind, LayerSpec,
    ParamSet, Source,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
