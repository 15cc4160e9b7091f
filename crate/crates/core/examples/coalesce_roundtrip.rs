//! Coalesce a model to half width and depth, grow it back, and check what is
//! preserved along the way.

use mlvc::model::{forward, init_params, param_count, ModelConfig};
use mlvc::projection::{coalesce_model, decoalesce_model, DepthFamily, LevelMapping, WidthFamily};

fn main() -> mlvc::Result<()> {
    let large = ModelConfig::new(4, 4, 8, 40, 16);
    let mapping = LevelMapping::from_families(&large, WidthFamily::Stack, DepthFamily::Adjacent)?;
    let small = &mapping.config_small;
    println!(
        "large: L={} E={} H={}  {} params",
        large.num_layers,
        large.hidden,
        large.num_heads,
        param_count(&large)
    );
    println!(
        "small: L={} E={} H={}  {} params",
        small.num_layers,
        small.hidden,
        small.num_heads,
        param_count(small)
    );

    let p_large = init_params::<f64>(&large, 0)?;
    let p_small = coalesce_model(&p_large, &mapping)?;
    let grown = decoalesce_model(&p_small, &mapping)?;
    let back = coalesce_model(&grown, &mapping)?;
    println!(
        "coalesce(decoalesce(S)) max |diff|: {:.2e}",
        back.max_abs_diff(&p_small)?
    );

    // width-only growth keeps the function
    let wide = LevelMapping::from_families(&large, WidthFamily::Stack, DepthFamily::Identity)?;
    let narrow = coalesce_model(&p_large, &wide)?;
    let tokens: Vec<usize> = (0..32).map(|i| (i * 7) % 40).collect();
    let a = forward(&narrow, &wide.config_small, &tokens, 2, 16, None)?.logits;
    let b = forward(
        &decoalesce_model(&narrow, &wide)?,
        &large,
        &tokens,
        2,
        16,
        None,
    )?
    .logits;
    println!(
        "width-only de-coalescing, logits max |diff|: {:.2e}",
        a.max_abs_diff(&b)?
    );
    Ok(())
}
