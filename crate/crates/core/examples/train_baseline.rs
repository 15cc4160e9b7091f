//! Train a small model from scratch and print its validation curve.
//!
//! ```text
//! cargo run --release --example train_baseline -- [steps]
//! ```

use std::path::Path;

use mlvc::data::{load_corpus, Dataset, TextMode};
use mlvc::model::ModelConfig;
use mlvc::train::{run_baseline_with, RunContext, VCycleConfig};

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
    vc.warmup_steps = steps / 10;
    let ctx = RunContext::new(&vc, &data)?.with_observer(|r| {
        if let Some(v) = r.val_loss {
            println!(
                "step {:>5}  lr {:.2e}  train {:.4}  val {v:.4}",
                r.step, r.lr, r.train_loss
            );
        }
    });
    let out = run_baseline_with::<f32>(&config, &vc, ctx)?;
    println!(
        "{} FLOPs in {:.1}s",
        out.ledger.total_flops(),
        out.ledger.wall_seconds()
    );
    Ok(())
}
