//! Time-conditioned multilayer perceptrons with hand-written reverse mode.

mod field;
mod optim;

pub(crate) use field::mean_row_sq_norm;
pub use field::{
    Activation, Architecture, ControlField, ForwardPass, LossGrad, OutputScale, TimeEmbedding,
};
pub use optim::{scheduled_lr, Method, Optimizer, OptimizerConfig};
