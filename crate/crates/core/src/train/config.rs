use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::projection::{DepthFamily, LevelMapping, WidthFamily};
use crate::tensor::DType;
use crate::train::AdamW;

fn d_levels() -> usize {
    2
}
fn d_alpha() -> f64 {
    0.25
}
fn d_warmup() -> usize {
    100
}
fn d_lr() -> f64 {
    1e-3
}
fn d_batch() -> usize {
    32
}
fn d_seq() -> usize {
    64
}
fn d_width() -> WidthFamily {
    WidthFamily::Stack
}
fn d_depth() -> DepthFamily {
    DepthFamily::Adjacent
}
fn d_eval_interval() -> usize {
    50
}
fn d_val_batches() -> usize {
    8
}
fn d_clip() -> f64 {
    1.0
}
fn d_dtype() -> DType {
    DType::F32
}

/// V-cycle and optimizer hyperparameters. Also drives the single-level
/// baseline, which uses `total_steps`, `warmup_steps` and the optimizer
/// settings only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VCycleConfig {
    /// Number of levels `K`; 1 means plain training.
    #[serde(default = "d_levels")]
    pub levels: usize,
    /// Steps at each level before coalescing; defaults to `warmup_steps`.
    #[serde(default)]
    pub e_a: Option<usize>,
    /// Steps for each smaller model; defaults to `total_steps / 2`.
    #[serde(default)]
    pub e_small: Option<usize>,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// Steps of the full model after the cycle (and of the baseline).
    pub total_steps: usize,
    #[serde(default = "d_warmup")]
    pub warmup_steps: usize,
    /// Warmup of the final full-model phase. Defaults to whatever is left of
    /// `warmup_steps` after the full model's own initialization phase.
    #[serde(default)]
    pub final_warmup_steps: Option<usize>,
    #[serde(default = "d_lr")]
    pub peak_lr: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_seq")]
    pub seq_len: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_width")]
    pub width_family: WidthFamily,
    #[serde(default = "d_depth")]
    pub depth_family: DepthFamily,
    /// Validation loss is measured every this many global steps and at the
    /// end of every phase.
    #[serde(default = "d_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "d_val_batches")]
    pub val_batches: usize,
    #[serde(default)]
    pub optimizer: AdamW,
    #[serde(default = "d_clip")]
    pub grad_clip: f64,
    #[serde(default = "d_dtype")]
    pub dtype: DType,
    /// Allows `alpha` of exactly 0 or 1.
    #[serde(default)]
    pub test_mode: bool,
}

impl VCycleConfig {
    /// Defaults with the given step budget.
    pub fn with_steps(total_steps: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "total_steps": total_steps }))
            .expect("defaults deserialize")
    }

    pub fn e_a(&self) -> usize {
        self.e_a.unwrap_or(self.warmup_steps)
    }

    pub fn e_small(&self) -> usize {
        self.e_small.unwrap_or(self.total_steps / 2)
    }

    pub fn small_warmup(&self) -> usize {
        self.warmup_steps.min(self.e_small() / 10)
    }

    pub fn init_warmup(&self) -> usize {
        self.warmup_steps.min(self.e_a())
    }

    pub fn final_warmup(&self) -> usize {
        self.final_warmup_steps.unwrap_or(if self.levels > 1 {
            self.warmup_steps.saturating_sub(self.init_warmup())
        } else {
            self.warmup_steps
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.levels < 1 {
            return fail("levels must be >= 1".into());
        }
        let alpha_ok = if self.test_mode {
            (0.0..=1.0).contains(&self.alpha)
        } else {
            self.alpha > 0.0 && self.alpha < 1.0
        };
        if !alpha_ok {
            return fail(format!("alpha {} must lie in (0, 1)", self.alpha));
        }
        if self.batch_size < 1 || self.seq_len < 1 {
            return fail("batch_size and seq_len must be >= 1".into());
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return fail(format!("peak_lr {} must be positive", self.peak_lr));
        }
        if self.eval_interval < 1 || self.val_batches < 1 {
            return fail("eval_interval and val_batches must be >= 1".into());
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 {
            return fail("invalid AdamW betas or eps".into());
        }
        if o.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return fail("weight_decay and grad_clip must be non-negative".into());
        }
        Ok(())
    }

    /// Level mappings from the top config down, `levels - 1` of them.
    pub fn level_mappings(&self, top: &ModelConfig) -> Result<Vec<LevelMapping>> {
        let mut out: Vec<LevelMapping> = Vec::new();
        let mut current = top.clone();
        for k in 1..self.levels {
            let m = LevelMapping::from_families(&current, self.width_family, self.depth_family)
                .map_err(|e| Error::Config(format!("level {} cannot be coalesced: {e}", k)))?;
            current = m.config_small.clone();
            out.push(m);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_schedule_rules() {
        let c = VCycleConfig::with_steps(3000);
        assert_eq!(c.e_a(), 100);
        assert_eq!(c.e_small(), 1500);
        assert_eq!(c.alpha, 0.25);
        assert_eq!(c.small_warmup(), 100);
        assert_eq!(c.final_warmup(), 0);
        let single = VCycleConfig {
            levels: 1,
            ..c.clone()
        };
        assert_eq!(single.final_warmup(), 100);
        c.validate().unwrap();
    }

    #[test]
    fn alpha_bounds() {
        let mut c = VCycleConfig::with_steps(10);
        c.alpha = 1.0;
        assert!(c.validate().is_err());
        c.test_mode = true;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn infeasible_geometry() {
        let mut c = VCycleConfig::with_steps(10);
        c.levels = 3;
        let top = ModelConfig::new(2, 2, 4, 10, 8);
        assert!(matches!(c.level_mappings(&top), Err(Error::Config(_))));
        c.levels = 2;
        assert_eq!(c.level_mappings(&top).unwrap().len(), 1);
    }
}
