use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::model::{flops_per_step, forward, init_params, loss_and_grads, ModelConfig, ParamSet};
use crate::projection::{coalesce_model, decoalesce_model, interpolate};
use crate::tensor::Element;
use crate::train::{clip_grad_norm, FlopsLedger, Schedule, TrainState, VCycleConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Small,
    Final,
    Baseline,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Small => "small",
            Phase::Final => "final",
            Phase::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(Phase::Init),
            "small" => Ok(Phase::Small),
            "final" => Ok(Phase::Final),
            "baseline" => Ok(Phase::Baseline),
            other => Err(Error::Format(format!("unknown phase {other:?}"))),
        }
    }
}

/// One optimizer step. `val_loss` is only present on evaluation steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub level: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
    pub cum_flops: u64,
    pub wall_seconds: f64,
}

type Observer<'a> = Box<dyn FnMut(&MetricsRow) + 'a>;

/// Everything a run shares across its phases: the single training batch
/// stream, the fixed validation batches, the ledger and the metrics stream.
pub struct RunContext<'a> {
    pub cfg: VCycleConfig,
    stream: BatchStream<'a>,
    val: Vec<Batch>,
    pub ledger: FlopsLedger,
    pub metrics: Vec<MetricsRow>,
    pub global_step: u64,
    start: Instant,
    on_row: Option<Observer<'a>>,
}

/// Seed offset separating the batch stream from parameter init.
const STREAM_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

impl<'a> RunContext<'a> {
    pub fn new(cfg: &VCycleConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        Ok(RunContext {
            stream: data.stream(cfg.batch_size, cfg.seq_len, cfg.seed ^ STREAM_SEED_SALT)?,
            val: data.val_batches(cfg.val_batches, cfg.batch_size, cfg.seq_len)?,
            cfg: cfg.clone(),
            ledger: FlopsLedger::default(),
            metrics: Vec::new(),
            global_step: 0,
            start: Instant::now(),
            on_row: None,
        })
    }

    /// Calls `f` on every metrics row as it is produced.
    pub fn with_observer(mut self, f: impl FnMut(&MetricsRow) + 'a) -> Self {
        self.on_row = Some(Box::new(f));
        self
    }

    pub fn cum_flops(&self) -> u64 {
        self.ledger.total_flops()
    }

    /// Mean loss over the fixed validation batches.
    pub fn val_loss<T: Element>(&self, params: &ParamSet<T>, config: &ModelConfig) -> Result<f64> {
        let mut total = 0.0;
        for b in &self.val {
            let out = forward(params, config, &b.inputs, b.batch, b.seq, Some(&b.targets))?;
            total += out.loss.unwrap_or(f64::NAN);
        }
        Ok(total / self.val.len() as f64)
    }
}

/// One training phase: where it runs and how its learning rate evolves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseSpec {
    pub level: usize,
    pub phase: Phase,
    pub steps: usize,
    pub warmup: usize,
}

/// `n_steps` AdamW updates with a warmup+cosine schedule over the phase.
/// Each step appends a metrics row and charges `flops_per_step` to the ledger.
pub fn train_steps<T: Element>(
    params: &mut ParamSet<T>,
    config: &ModelConfig,
    state: &mut TrainState<T>,
    spec: PhaseSpec,
    ctx: &mut RunContext<'_>,
) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let schedule = Schedule::new(cfg.peak_lr, spec.warmup, spec.steps);
    let per_step = flops_per_step(config, cfg.batch_size, cfg.seq_len);
    for s in 0..spec.steps {
        let t0 = Instant::now();
        let batch = ctx.stream.next().expect("batch stream is infinite");
        let step = ctx.global_step + 1;
        let mut out = loss_and_grads(
            params,
            config,
            &batch.inputs,
            &batch.targets,
            batch.batch,
            batch.seq,
        )?;
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                loss: out.loss,
            });
        }
        clip_grad_norm(&mut out.grads, cfg.grad_clip);
        let lr = schedule.lr(s);
        cfg.optimizer.step(params, &out.grads, state, lr)?;
        ctx.global_step = step;
        ctx.ledger
            .record_step(spec.level, spec.phase, per_step, t0.elapsed().as_secs_f64());
        let evaluate = step.is_multiple_of(cfg.eval_interval as u64) || s + 1 == spec.steps;
        let val_loss = if evaluate {
            let v = ctx.val_loss(params, config)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { step, loss: v });
            }
            Some(v)
        } else {
            None
        };
        let row = MetricsRow {
            step,
            level: spec.level,
            phase: spec.phase,
            train_loss: out.loss,
            val_loss,
            lr,
            cum_flops: ctx.ledger.total_flops(),
            wall_seconds: ctx.start.elapsed().as_secs_f64(),
        };
        if let Some(f) = ctx.on_row.as_mut() {
            f(&row);
        }
        ctx.metrics.push(row);
    }
    Ok(())
}

/// Parameters, ledger and metrics of a finished run.
pub struct RunOutput<T> {
    pub params: ParamSet<T>,
    pub config: ModelConfig,
    pub ledger: FlopsLedger,
    pub metrics: Vec<MetricsRow>,
}

impl<T> RunOutput<T> {
    /// Last recorded validation loss.
    pub fn final_val_loss(&self) -> Option<f64> {
        self.metrics.iter().rev().find_map(|r| r.val_loss)
    }
}

/// Single-level training for `total_steps` from `init_params(config, seed)`.
pub fn run_baseline<T: Element>(
    config: &ModelConfig,
    vc: &VCycleConfig,
    data: &Dataset,
) -> Result<RunOutput<T>> {
    run_baseline_with(config, vc, RunContext::new(vc, data)?)
}

pub fn run_baseline_with<T: Element>(
    config: &ModelConfig,
    vc: &VCycleConfig,
    mut ctx: RunContext<'_>,
) -> Result<RunOutput<T>> {
    let mut params = init_params::<T>(config, vc.seed)?;
    let mut state = TrainState::fresh(&params);
    let spec = PhaseSpec {
        level: 1,
        phase: Phase::Baseline,
        steps: vc.total_steps,
        warmup: vc.warmup_steps,
    };
    train_steps(&mut params, config, &mut state, spec, &mut ctx)?;
    Ok(RunOutput {
        params,
        config: config.clone(),
        ledger: ctx.ledger,
        metrics: ctx.metrics,
    })
}

/// The V-cycle: train and coalesce on the way down, train, de-coalesce and
/// interpolate on the way up, then train the full model for `total_steps`.
/// The optimizer state is fresh in every phase.
pub fn run_vcycle<T: Element>(
    config_top: &ModelConfig,
    vc: &VCycleConfig,
    data: &Dataset,
) -> Result<RunOutput<T>> {
    run_vcycle_with(config_top, vc, RunContext::new(vc, data)?)
}

pub fn run_vcycle_with<T: Element>(
    config_top: &ModelConfig,
    vc: &VCycleConfig,
    mut ctx: RunContext<'_>,
) -> Result<RunOutput<T>> {
    let mappings = vc.level_mappings(config_top)?;
    let config_at = |k: usize| -> &ModelConfig {
        if k == 0 {
            config_top
        } else {
            &mappings[k - 1].config_small
        }
    };
    let mut params = init_params::<T>(config_top, vc.seed)?;
    let mut before_coalescing: Vec<ParamSet<T>> = Vec::new();

    for (k, mapping) in mappings.iter().enumerate() {
        let mut state = TrainState::fresh(&params);
        let spec = PhaseSpec {
            level: k + 1,
            phase: Phase::Init,
            steps: vc.e_a(),
            warmup: vc.init_warmup(),
        };
        train_steps(&mut params, config_at(k), &mut state, spec, &mut ctx)?;
        let small = coalesce_model(&params, mapping)?;
        before_coalescing.push(std::mem::replace(&mut params, small));
    }

    for k in (1..vc.levels).rev() {
        let mut state = TrainState::fresh(&params);
        let spec = PhaseSpec {
            level: k + 1,
            phase: Phase::Small,
            steps: vc.e_small(),
            warmup: vc.small_warmup(),
        };
        train_steps(&mut params, config_at(k), &mut state, spec, &mut ctx)?;
        let expanded = decoalesce_model(&params, &mappings[k - 1])?;
        let previous = before_coalescing.pop().expect("one saved model per level");
        params = interpolate(&previous, &expanded, vc.alpha)?;
    }

    let mut state = TrainState::fresh(&params);
    let spec = PhaseSpec {
        level: 1,
        phase: Phase::Final,
        steps: vc.total_steps,
        warmup: vc.final_warmup(),
    };
    train_steps(&mut params, config_top, &mut state, spec, &mut ctx)?;
    Ok(RunOutput {
        params,
        config: config_top.clone(),
        ledger: ctx.ledger,
        metrics: ctx.metrics,
    })
}

/// First point where a run's full-size validation loss is at or below the
/// target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub step: u64,
    pub cum_flops: u64,
    pub wall_seconds: f64,
    pub val_loss: f64,
}

/// Only level-1 rows count: the quality target is a property of the
/// full-size model.
pub fn first_crossing(metrics: &[MetricsRow], target: f64) -> Option<Crossing> {
    metrics.iter().find_map(|r| match r.val_loss {
        Some(v) if r.level == 1 && v <= target => Some(Crossing {
            step: r.step,
            cum_flops: r.cum_flops,
            wall_seconds: r.wall_seconds,
            val_loss: v,
        }),
        _ => None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Saving {
    Reached {
        /// `1 - vcycle_flops / baseline_flops` at the first crossings.
        flops: f64,
        walltime: f64,
        baseline: Crossing,
        vcycle: Crossing,
    },
    NotReached {
        baseline: bool,
        vcycle: bool,
    },
}

/// Compute saved by the V-cycle to first reach `target` validation loss.
pub fn flops_saving(baseline: &[MetricsRow], vcycle: &[MetricsRow], target: f64) -> Saving {
    match (
        first_crossing(baseline, target),
        first_crossing(vcycle, target),
    ) {
        (Some(b), Some(v)) => Saving::Reached {
            flops: 1.0 - v.cum_flops as f64 / b.cum_flops as f64,
            walltime: if b.wall_seconds > 0.0 {
                1.0 - v.wall_seconds / b.wall_seconds
            } else {
                0.0
            },
            baseline: b,
            vcycle: v,
        },
        (b, v) => Saving::NotReached {
            baseline: b.is_some(),
            vcycle: v.is_some(),
        },
    }
}
