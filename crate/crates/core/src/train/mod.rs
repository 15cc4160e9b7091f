//! AdamW training, the V-cycle schedule and FLOPs accounting.

mod config;
mod ledger;
mod optim;
mod run;
mod schedule;

pub use config::VCycleConfig;
pub use ledger::{FlopsLedger, LedgerEntry};
pub use optim::{clip_grad_norm, global_norm, AdamW, TrainState};
pub use run::{
    first_crossing, flops_saving, run_baseline, run_baseline_with, run_vcycle, run_vcycle_with,
    train_steps, Crossing, MetricsRow, Phase, PhaseSpec, RunContext, RunOutput, Saving,
};
pub use schedule::Schedule;
