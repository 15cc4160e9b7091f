//! Analytic matmul FLOP counts (`2*m*k*n` per product).

use crate::model::ModelConfig;

fn mm(m: usize, k: usize, n: usize) -> u64 {
    2 * m as u64 * k as u64 * n as u64
}

/// Forward-pass FLOPs for one `[batch, seq]` step.
pub fn forward_flops(config: &ModelConfig, batch: usize, seq: usize) -> u64 {
    let tokens = batch * seq;
    let (e, f, t) = (config.hidden, config.ffn_hidden(), config.vocab);
    let d = config.head_dim;
    let heads = (batch * config.num_heads) as u64;
    let projections = 4 * mm(tokens, e, e);
    let scores_and_mix = heads * (mm(seq, d, seq) + mm(seq, seq, d));
    let ffn = mm(tokens, e, f) + mm(tokens, f, e);
    let per_layer = projections + scores_and_mix + ffn;
    config.num_layers as u64 * per_layer + mm(tokens, e, t)
}

/// Training FLOPs for one optimizer step: forward plus a backward pass
/// counted as twice the forward.
pub fn flops_per_step(config: &ModelConfig, batch: usize, seq: usize) -> u64 {
    3 * forward_flops(config, batch, seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_in_batch() {
        let c = ModelConfig::new(4, 4, 16, 80, 64);
        assert_eq!(flops_per_step(&c, 64, 64), 2 * flops_per_step(&c, 32, 64));
    }

    #[test]
    fn halving_width_and_depth_is_near_one_eighth() {
        let c = ModelConfig::new(4, 4, 16, 80, 64);
        let s = c.coarsened(true).unwrap();
        let (big, small) = (flops_per_step(&c, 32, 64), flops_per_step(&s, 32, 64));
        let ratio = small as f64 / big as f64;
        // 1/8 on the E^2 terms, 1/4 on attention scores, 1/2 on the vocab head
        let n = (32 * 64) as f64;
        let (e, t, seq) = (64.0, 80.0, 64.0);
        let big_fwd = 4.0 * (24.0 * n * e * e + 4.0 * 32.0 * seq * seq * e) + 2.0 * n * e * t;
        let small_fwd = 2.0 * (24.0 * n * (e / 2.0).powi(2) + 4.0 * 32.0 * seq * seq * e / 2.0)
            + 2.0 * n * (e / 2.0) * t;
        assert!((ratio - small_fwd / big_fwd).abs() < 1e-12);
        assert!(ratio > 0.125 && ratio < 0.2, "ratio {ratio}");
    }
}
