//! Dense ReLU networks with exact reverse-mode gradients, an Adam optimizer
//! and the stochastic policy heads used by the agents.

mod mlp;
mod optim;
mod policy;

pub use mlp::{Activation, Gradients, LayerSlot, Mlp, MlpSpec, ParamVector, Tape};
pub(crate) use mlp::l2_norm;
pub use optim::{soft_update, OptimizerState};
pub use policy::{PolicyHead, PolicyNet, LOG_STD_MAX, LOG_STD_MIN};
