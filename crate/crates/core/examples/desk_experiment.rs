//! Baseline vs. two-level V-cycle on the bundled corpus, with the FLOPs
//! saving at the baseline's final validation loss.
//!
//! ```text
//! cargo run --release --example desk_experiment -- [total_steps] [f32|f64]
//! ```

use std::path::Path;

use mlvc::data::{load_corpus, Dataset, TextMode};
use mlvc::model::{flops_per_step, ModelConfig};
use mlvc::train::{
    flops_saving, run_baseline_with, run_vcycle_with, RunContext, Saving, VCycleConfig,
};
use mlvc::{DType, Element};

fn run<T: Element>(data: &Dataset, config: &ModelConfig, vc: &VCycleConfig) -> mlvc::Result<()> {
    let progress = |tag: &'static str| {
        move |r: &mlvc::train::MetricsRow| {
            if let Some(v) = r.val_loss {
                println!(
                    "{tag} step {:>5} L{} {:<8} train {:.4} val {:.4}",
                    r.step,
                    r.level,
                    r.phase.name(),
                    r.train_loss,
                    v
                );
            }
        }
    };
    let base = run_baseline_with::<T>(
        config,
        vc,
        RunContext::new(vc, data)?.with_observer(progress("base")),
    )?;
    let cycle = run_vcycle_with::<T>(
        config,
        vc,
        RunContext::new(vc, data)?.with_observer(progress("vcyc")),
    )?;
    let (b, v) = (
        base.final_val_loss().unwrap(),
        cycle.final_val_loss().unwrap(),
    );
    println!(
        "final val loss: baseline {b:.4}, v-cycle {v:.4} (diff {:+.4})",
        v - b
    );
    match flops_saving(&base.metrics, &cycle.metrics, b) {
        Saving::Reached { flops, walltime, baseline, vcycle } => println!(
            "FLOPs saving at {b:.4}: {:.1}% (baseline step {}, v-cycle step {}), walltime saving {:.1}%",
            100.0 * flops, baseline.step, vcycle.step, 100.0 * walltime
        ),
        Saving::NotReached { .. } => println!("v-cycle did not reach {b:.4}"),
    }
    Ok(())
}

fn main() -> mlvc::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps = args
        .get(1)
        .map_or(3000, |s| s.parse().expect("total_steps"));
    let dtype: DType = args.get(2).map_or(Ok(DType::F32), |s| s.parse())?;
    let corpus = load_corpus(Path::new("data/shakespeare.txt"), TextMode::Utf8, 64)?;
    let data = Dataset::new(&corpus);
    let config = ModelConfig::new(4, 4, 16, data.vocab.size(), 64);
    let mut vc = VCycleConfig::with_steps(steps);
    vc.dtype = dtype;
    if let Ok(s) = std::env::var("PEAK_LR") {
        vc.peak_lr = s.parse().unwrap();
    }
    if let Ok(s) = std::env::var("FINAL_WARMUP") {
        vc.final_warmup_steps = Some(s.parse().unwrap());
    }
    if let Ok(s) = std::env::var("ALPHA") {
        vc.alpha = s.parse().unwrap();
    }
    let small = vc.level_mappings(&config)?[0].config_small.clone();
    println!(
        "vocab {}, per-step FLOPs {} (small {})",
        data.vocab.size(),
        flops_per_step(&config, vc.batch_size, vc.seq_len),
        flops_per_step(&small, vc.batch_size, vc.seq_len)
    );
    match dtype {
        DType::F32 => run::<f32>(&data, &config, &vc),
        DType::F64 => run::<f64>(&data, &config, &vc),
    }
}
