//! Multi-level V-cycle training for transformer language models.
//!
//! A large model is coalesced into a smaller one (width and depth halved),
//! the small model is trained cheaply, de-coalesced back to the large shape
//! and interpolated into the large model, which then resumes training.
//!
//! * [`tensor`] and [`tape`]: dense tensors and reverse-mode autodiff.
//! * [`model`]: a pre-norm GPT-style decoder with a canonical tensor inventory.
//! * [`projection`]: coalescing / de-coalescing / interpolation operators.
//! * [`train`]: AdamW, schedules, FLOPs ledger, baseline and V-cycle runs.
//! * [`data`]: character-level corpus and deterministic batching.
//! * [`io`]: checkpoints, metrics CSV, run manifests and experiment configs.
//! * [`verify`]: the invariant suite behind `mlvc verify`.

pub mod cli;
pub mod data;
pub mod error;
pub mod io;
mod kernels;
pub mod model;
pub mod projection;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use kernels::matmul_threads;
pub use tensor::{DType, Element, Tensor};
