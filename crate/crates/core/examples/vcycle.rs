//! A short two-level V-cycle: phases, levels and the FLOPs ledger.
//!
//! ```text
//! cargo run --release --example vcycle -- [steps]
//! ```

use std::path::Path;

use mlvc::data::{load_corpus, Dataset, TextMode};
use mlvc::model::ModelConfig;
use mlvc::train::{run_vcycle_with, RunContext, VCycleConfig};

fn main() -> mlvc::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .map_or(300, |s| s.parse().expect("steps"));
    let corpus = load_corpus(Path::new("data/shakespeare.txt"), TextMode::Utf8, 32)?;
    let data = Dataset::new(&corpus);
    let config = ModelConfig::new(2, 2, 16, data.vocab.size(), 32);
    let mut vc = VCycleConfig::with_steps(steps);
    vc.batch_size = 16;
    vc.seq_len = 32;
    vc.warmup_steps = 30;
    let ctx = RunContext::new(&vc, &data)?.with_observer(|r| {
        if let Some(v) = r.val_loss {
            println!(
                "step {:>5}  level {}  {:<6} lr {:.2e}  val {v:.4}",
                r.step,
                r.level,
                r.phase.name(),
                r.lr
            );
        }
    });
    let out = run_vcycle_with::<f32>(&config, &vc, ctx)?;
    println!("\nlevel  phase   steps  FLOPs/step        FLOPs");
    for e in &out.ledger.entries {
        println!(
            "{:>5}  {:<6} {:>6} {:>11} {:>12}",
            e.level,
            e.phase.name(),
            e.steps,
            e.flops_per_step,
            e.flops
        );
    }
    println!("total {} FLOPs", out.ledger.total_flops());
    Ok(())
}
