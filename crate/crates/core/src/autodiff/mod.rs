//! Reverse-mode differentiation substrate: tensors, the tape, optimizer and
//! learning-rate schedule.

mod graph;
mod kernels;
mod optim;
mod real;
mod tensor;

pub use graph::{AttnSpec, Gradients, Graph, NodeId};
pub use kernels::{
    dot, label_smoothed_cross_entropy, layer_norm, layer_norm_row, log_sum_exp, relu_in_place,
    sinusoidal_positions, softmax, softmax_in_place, SmoothedLoss, PROB_FLOOR,
};
pub use optim::{adam_step, lr_at, AdamState, LrSchedule, StepDiagnostics};
pub use real::{matmul, MatRef, Real};
pub use tensor::{ParamSet, Tensor};
