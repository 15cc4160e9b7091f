//! Analytic per-step training FLOPs for a model and its coalesced levels.

use mlvc::model::{flops_per_step, forward_flops, param_count, ModelConfig};
use mlvc::train::VCycleConfig;

fn main() -> mlvc::Result<()> {
    let top = ModelConfig::new(8, 8, 16, 80, 64);
    let (batch, seq) = (32, 64);
    let mut vc = VCycleConfig::with_steps(1000);
    vc.levels = 4;
    let mut configs = vec![top.clone()];
    configs.extend(vc.level_mappings(&top)?.into_iter().map(|m| m.config_small));
    let base = flops_per_step(&top, batch, seq) as f64;
    println!("level  L  E    params    forward FLOPs   step FLOPs   vs level 1");
    for (k, c) in configs.iter().enumerate() {
        let step = flops_per_step(c, batch, seq);
        println!(
            "{:>5} {:>2} {:>3} {:>9} {:>15} {:>12} {:>10.4}",
            k + 1,
            c.num_layers,
            c.hidden,
            param_count(c),
            forward_flops(c, batch, seq),
            step,
            step as f64 / base
        );
    }
    Ok(())
}
