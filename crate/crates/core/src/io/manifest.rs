//! Experiment config files and run manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Dataset, TextMode};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{FlopsLedger, VCycleConfig};

fn d_ffn_mult() -> usize {
    4
}
fn d_eps() -> f64 {
    1e-5
}

/// Model section of an experiment file. `vocab` defaults to the corpus
/// vocabulary, `max_seq` to the training sequence length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    #[serde(default = "d_ffn_mult")]
    pub ffn_mult: usize,
    #[serde(default)]
    pub vocab: Option<usize>,
    #[serde(default)]
    pub max_seq: Option<usize>,
    #[serde(default = "d_eps")]
    pub layernorm_eps: f64,
}

impl ModelSpec {
    pub fn resolve(&self, corpus_vocab: usize, seq_len: usize) -> Result<ModelConfig> {
        let vocab = self.vocab.unwrap_or(corpus_vocab);
        if vocab < corpus_vocab {
            return Err(Error::Config(format!(
                "vocab {vocab} is smaller than the corpus vocabulary {corpus_vocab}"
            )));
        }
        let max_seq = self.max_seq.unwrap_or(seq_len);
        if max_seq < seq_len {
            return Err(Error::Config(format!(
                "max_seq {max_seq} < seq_len {seq_len}"
            )));
        }
        let c = ModelConfig {
            num_layers: self.num_layers,
            hidden: self.num_heads * self.head_dim,
            num_heads: self.num_heads,
            head_dim: self.head_dim,
            ffn_mult: self.ffn_mult,
            vocab,
            max_seq,
            layernorm_eps: self.layernorm_eps,
        };
        c.validate()?;
        Ok(c)
    }
}

impl From<&ModelConfig> for ModelSpec {
    fn from(c: &ModelConfig) -> Self {
        ModelSpec {
            num_layers: c.num_layers,
            num_heads: c.num_heads,
            head_dim: c.head_dim,
            ffn_mult: c.ffn_mult,
            vocab: Some(c.vocab),
            max_seq: Some(c.max_seq),
            layernorm_eps: c.layernorm_eps,
        }
    }
}

/// An experiment file: `{"model": {...}, "train": {...}}`. A run manifest
/// has the same two sections and is accepted as an experiment file too.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub train: VCycleConfig,
    #[serde(default)]
    pub text_mode: TextMode,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
    pub chars: usize,
    pub vocab_size: usize,
    pub train_tokens: usize,
    pub val_tokens: usize,
}

impl CorpusInfo {
    pub fn new(path: &Path, corpus: &Corpus, data: &Dataset) -> Self {
        CorpusInfo {
            path: path.display().to_string(),
            sha256: corpus.sha256.clone(),
            bytes: corpus.bytes,
            chars: corpus.chars(),
            vocab_size: data.vocab.size(),
            train_tokens: data.split_at,
            val_tokens: data.tokens.len() - data.split_at,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub total_flops: u64,
    pub final_val_loss: Option<f64>,
    pub wall_seconds: f64,
    pub ledger: FlopsLedger,
}

/// Written next to every run's outputs; re-running with the manifest as
/// `--config` reproduces the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub mode: String,
    pub model: ModelSpec,
    pub train: VCycleConfig,
    pub text_mode: TextMode,
    pub resolved_model: ModelConfig,
    pub corpus: CorpusInfo,
    pub summary: Option<RunSummary>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_spec_fills_vocab_and_seq() {
        let s: ModelSpec =
            serde_json::from_str(r#"{"num_layers":4,"num_heads":4,"head_dim":16}"#).unwrap();
        let c = s.resolve(77, 64).unwrap();
        assert_eq!((c.hidden, c.vocab, c.max_seq, c.ffn_mult), (64, 77, 64, 4));
        let small_vocab = ModelSpec {
            vocab: Some(10),
            ..s.clone()
        };
        assert!(small_vocab.resolve(77, 64).is_err());
        assert_eq!(ModelSpec::from(&c).resolve(77, 64).unwrap(), c);
    }

    #[test]
    fn experiment_file_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.json");
        std::fs::write(
            &p,
            r#"{"model":{"num_layers":2,"num_heads":2,"head_dim":8},"train":{"total_steps":100,"alpha":0.5}}"#,
        )
        .unwrap();
        let e = ExperimentConfig::load(&p).unwrap();
        assert_eq!(e.train.alpha, 0.5);
        assert_eq!(e.train.levels, 2);
        std::fs::write(&p, r#"{"model":{},"train":{}}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(&p), Err(Error::Config(_))));
    }
}
