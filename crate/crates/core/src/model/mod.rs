//! Decoder-only transformer addressed through the canonical tensor inventory.

mod config;
mod flops;
mod forward;
pub mod params;

pub use config::ModelConfig;
pub use flops::{flops_per_step, forward_flops};
pub use forward::{build_logits, forward, loss_and_grads, ForwardOutput, ParamVars, StepOutput};
pub use params::{init_params, param_count, param_specs, Axis, ParamSet, ParamSpec};
