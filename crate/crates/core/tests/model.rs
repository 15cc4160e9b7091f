use mlvc::model::{forward, init_params, loss_and_grads, ModelConfig};
use mlvc::tape::{Tape, Var};
use mlvc::verify::{random_params, swap_heads};
use mlvc::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Central-difference check of `build` (inputs -> scalar) against the tape's
/// gradient for every input element. Returns the worst relative error.
fn fd_check(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    let eps = 1e-6;
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let g = grads.get(vars[i]).expect("gradient");
        for j in 0..x.len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += eps;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= eps;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let an = g.data()[j];
            worst = worst.max((fd - an).abs() / (1e-6 + fd.abs().max(an.abs())).max(1.0));
        }
    }
    worst
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(v).shape().to_vec();
    let w = tape.constant(rand_tensor(&mut rng, &shape));
    let p = tape.mul(v, w).unwrap();
    tape.sum(p)
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut r = |s: &[usize]| rand_tensor(&mut rng, s);
    let cases: Vec<(&str, f64)> = vec![
        (
            "matmul",
            fd_check(vec![r(&[3, 4]), r(&[4, 2])], |t, v| {
                let o = t.matmul(v[0], v[1]).unwrap();
                project(t, o, 1)
            }),
        ),
        (
            "add bias",
            fd_check(vec![r(&[3, 4]), r(&[4])], |t, v| {
                let o = t.add(v[0], v[1]).unwrap();
                project(t, o, 2)
            }),
        ),
        (
            "sub mul scale",
            fd_check(vec![r(&[2, 3]), r(&[2, 3])], |t, v| {
                let d = t.sub(v[0], v[1]).unwrap();
                let m = t.mul(d, v[0]).unwrap();
                let s = t.scale(m, 1.7);
                project(t, s, 3)
            }),
        ),
        (
            "gelu",
            fd_check(vec![r(&[5, 3])], |t, v| {
                let o = t.gelu(v[0]);
                project(t, o, 4)
            }),
        ),
        (
            "softmax",
            fd_check(vec![r(&[3, 5])], |t, v| {
                let o = t.softmax_rows(v[0]).unwrap();
                project(t, o, 5)
            }),
        ),
        (
            "layer_norm",
            fd_check(vec![r(&[3, 6]), r(&[6]), r(&[6])], |t, v| {
                let o = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                project(t, o, 6)
            }),
        ),
        (
            "embedding",
            fd_check(vec![r(&[5, 3])], |t, v| {
                let o = t.embedding(v[0], &[4, 0, 4, 2]).unwrap();
                project(t, o, 7)
            }),
        ),
        (
            "attention",
            fd_check(vec![r(&[6, 4]), r(&[6, 4]), r(&[6, 4])], |t, v| {
                let o = t.causal_attention(v[0], v[1], v[2], 2, 3, 2).unwrap();
                project(t, o, 8)
            }),
        ),
        (
            "cross_entropy",
            fd_check(vec![r(&[4, 5])], |t, v| {
                t.cross_entropy(v[0], &[1, 4, 0, 1]).unwrap()
            }),
        ),
    ];
    for (name, err) in cases {
        assert!(err < 1e-6, "{name}: relative error {err:.3e}");
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let config = ModelConfig::new(2, 2, 8, 40, 16);
    let params = init_params::<f64>(&config, 0).unwrap();
    let tokens: Vec<usize> = (0..32).map(|i| (i * 11) % 40).collect();
    let targets: Vec<usize> = (0..32).map(|i| (i * 5 + 1) % 40).collect();
    let loss = forward(&params, &config, &tokens, 2, 16, Some(&targets))
        .unwrap()
        .loss
        .unwrap();
    assert!((loss - (40f64).ln()).abs() < 0.1, "loss {loss}");
}

#[test]
fn both_precisions_agree() {
    let config = ModelConfig::new(2, 2, 8, 30, 8);
    let p64 = init_params::<f64>(&config, 5).unwrap();
    let p32 = p64.cast::<f32>();
    let tokens: Vec<usize> = (0..16).map(|i| (i * 7) % 30).collect();
    let a = forward(&p64, &config, &tokens, 2, 8, None).unwrap().logits;
    let b = forward(&p32, &config, &tokens, 2, 8, None)
        .unwrap()
        .logits
        .cast::<f64>();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-4);
}

#[test]
fn input_validation() {
    let config = ModelConfig::new(1, 1, 4, 10, 4);
    let p = init_params::<f64>(&config, 0).unwrap();
    assert!(matches!(
        forward(&p, &config, &[0; 5], 1, 5, None),
        Err(mlvc::Error::SequenceTooLong { .. })
    ));
    assert!(matches!(
        forward(&p, &config, &[0, 10, 0, 0], 1, 4, None),
        Err(mlvc::Error::TokenOutOfRange { id: 10, .. })
    ));
    assert!(loss_and_grads(&p, &config, &[0; 4], &[0; 3], 1, 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn future_tokens_do_not_change_past_logits(
        seed in any::<u64>(),
        pos in 1usize..8,
        new_token in 0usize..13,
    ) {
        let config = ModelConfig::new(2, 2, 4, 13, 8);
        let p = random_params(&config, seed, 0.3).unwrap();
        let tokens: Vec<usize> = (0..8).map(|i| (i * 5 + seed as usize) % 13).collect();
        let mut changed = tokens.clone();
        changed[pos] = new_token;
        let a = forward(&p, &config, &tokens, 1, 8, None).unwrap().logits;
        let b = forward(&p, &config, &changed, 1, 8, None).unwrap().logits;
        let v = config.vocab;
        prop_assert_eq!(&a.data()[..pos * v], &b.data()[..pos * v]);
    }

    #[test]
    fn permuting_heads_leaves_logits_unchanged(
        seed in any::<u64>(),
        layer in 0usize..2,
        h in 0usize..3,
        h2 in 0usize..3,
    ) {
        let config = ModelConfig::new(2, 3, 4, 11, 6);
        let p = random_params(&config, seed, 0.3).unwrap();
        let mut q = p.clone();
        swap_heads(&mut q, &config, layer, h, h2).unwrap();
        let tokens: Vec<usize> = (0..12).map(|i| (i * 3 + seed as usize) % 11).collect();
        let a = forward(&p, &config, &tokens, 2, 6, None).unwrap().logits;
        let b = forward(&q, &config, &tokens, 2, 6, None).unwrap().logits;
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn batch_rows_are_independent(seed in any::<u64>(), other in 0usize..9) {
        let config = ModelConfig::new(1, 2, 4, 9, 5);
        let p = random_params(&config, seed, 0.3).unwrap();
        let row: Vec<usize> = (0..5).map(|i| (i + seed as usize) % 9).collect();
        let alone = forward(&p, &config, &row, 1, 5, None).unwrap().logits;
        let mut pair = row.clone();
        pair.extend(std::iter::repeat_n(other, 5));
        let both = forward(&p, &config, &pair, 2, 5, None).unwrap().logits;
        prop_assert_eq!(alone.data(), &both.data()[..alone.len()]);
    }
}
