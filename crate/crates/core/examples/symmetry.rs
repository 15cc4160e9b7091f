//! De-coalesced neurons receive identical gradients until interpolation
//! with an independently trained model breaks the tie.

use mlvc::model::loss_and_grads;
use mlvc::model::ModelConfig;
use mlvc::projection::{decoalesce_model, duplicate_grad_spread, interpolate, LevelMapping};
use mlvc::verify::random_params;

fn main() -> mlvc::Result<()> {
    let large = ModelConfig::new(4, 4, 4, 20, 8);
    let m = LevelMapping::halving(&large)?;
    let small = random_params(&m.config_small, 1, 0.2)?;
    let grown = decoalesce_model(&small, &m)?;
    let other = random_params(&large, 2, 0.2)?;
    let inputs: Vec<usize> = (0..16).map(|i| (i * 3) % 20).collect();
    let targets: Vec<usize> = (0..16).map(|i| (i * 5 + 1) % 20).collect();
    for alpha in [1.0, 0.75, 0.5, 0.25] {
        let p = interpolate(&other, &grown, alpha)?;
        let g = loss_and_grads(&p, &large, &inputs, &targets, 2, 8)?.grads;
        let r = duplicate_grad_spread(&g, &m)?;
        println!(
            "alpha {alpha:<4}  max duplicated-gradient spread {:.3e} over {} pairs",
            r.max_diff, r.pairs
        );
    }
    Ok(())
}
