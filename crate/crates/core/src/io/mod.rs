//! Checkpoints, metrics CSV, experiment configs and run manifests.

mod checkpoint;
mod manifest;
mod metrics;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointHeader, CheckpointMeta, StoredParams, TensorEntry, FORMAT_VERSION, MAGIC,
};
pub use manifest::{CorpusInfo, ExperimentConfig, Manifest, ModelSpec, RunSummary, TOOL_VERSION};
pub use metrics::{read_metrics, write_merged, write_metrics, MetricsWriter, METRICS_HEADER};
