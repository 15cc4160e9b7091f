use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_ffn_mult() -> usize {
    4
}

fn default_eps() -> f64 {
    1e-5
}

/// Architecture of one decoder-only transformer level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    pub vocab: usize,
    pub max_seq: usize,
    #[serde(default = "default_eps")]
    pub layernorm_eps: f64,
}

impl ModelConfig {
    /// Config with `hidden = heads * head_dim`, `ffn_mult = 4` and `eps = 1e-5`.
    pub fn new(
        num_layers: usize,
        num_heads: usize,
        head_dim: usize,
        vocab: usize,
        max_seq: usize,
    ) -> Self {
        ModelConfig {
            num_layers,
            hidden: num_heads * head_dim,
            num_heads,
            head_dim,
            ffn_mult: default_ffn_mult(),
            vocab,
            max_seq,
            layernorm_eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_layers < 1 {
            return fail("num_layers must be >= 1".into());
        }
        if self.num_heads < 1 || self.head_dim < 1 {
            return fail("num_heads and head_dim must be >= 1".into());
        }
        if self.hidden != self.num_heads * self.head_dim {
            return fail(format!(
                "hidden {} != num_heads {} * head_dim {}",
                self.hidden, self.num_heads, self.head_dim
            ));
        }
        if self.ffn_mult < 1 {
            return fail("ffn_mult must be >= 1".into());
        }
        if self.vocab < 2 {
            return fail("vocab must be >= 2".into());
        }
        if self.max_seq < 1 {
            return fail("max_seq must be >= 1".into());
        }
        if !(self.layernorm_eps > 0.0 && self.layernorm_eps.is_finite()) {
            return fail("layernorm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn ffn_hidden(&self) -> usize {
        self.ffn_mult * self.hidden
    }

    /// The next coarser level: heads (and therefore width) halved, head
    /// dimension kept, layers halved when `halve_depth`.
    pub fn coarsened(&self, halve_depth: bool) -> Result<ModelConfig> {
        self.validate()?;
        if !self.num_heads.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "cannot halve {} heads",
                self.num_heads
            )));
        }
        if halve_depth && !self.num_layers.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "cannot halve {} layers",
                self.num_layers
            )));
        }
        let heads = self.num_heads / 2;
        let small = ModelConfig {
            num_layers: if halve_depth {
                self.num_layers / 2
            } else {
                self.num_layers
            },
            hidden: heads * self.head_dim,
            num_heads: heads,
            ..self.clone()
        };
        small.validate()?;
        Ok(small)
    }

    /// Inverse of [`ModelConfig::coarsened`].
    pub fn refined(&self, double_depth: bool) -> ModelConfig {
        let heads = self.num_heads * 2;
        ModelConfig {
            num_layers: if double_depth {
                self.num_layers * 2
            } else {
                self.num_layers
            },
            hidden: heads * self.head_dim,
            num_heads: heads,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::new(2, 2, 4, 11, 8).validate().is_ok());
        let mut bad = ModelConfig::new(2, 2, 4, 11, 8);
        bad.hidden = 9;
        assert!(bad.validate().is_err());
        assert!(ModelConfig::new(0, 2, 4, 11, 8).validate().is_err());
        assert!(ModelConfig::new(1, 2, 4, 1, 8).validate().is_err());
    }

    #[test]
    fn coarsen_halves_heads_and_layers() {
        let c = ModelConfig::new(4, 4, 16, 50, 32);
        let s = c.coarsened(true).unwrap();
        assert_eq!(
            (s.num_layers, s.hidden, s.num_heads, s.head_dim),
            (2, 32, 2, 16)
        );
        assert_eq!(s.refined(true), c);
        assert!(ModelConfig::new(3, 4, 16, 50, 32).coarsened(true).is_err());
        assert!(ModelConfig::new(3, 4, 16, 50, 32).coarsened(false).is_ok());
        assert!(ModelConfig::new(2, 1, 16, 50, 32).coarsened(false).is_err());
    }

    #[test]
    fn serde_defaults() {
        let c: ModelConfig = serde_json::from_str(
            r#"{"num_layers":2,"hidden":8,"num_heads":2,"head_dim":4,"vocab":11,"max_seq":8}"#,
        )
        .unwrap();
        assert_eq!(c.ffn_mult, 4);
        assert_eq!(c.layernorm_eps, 1e-5);
    }
}
