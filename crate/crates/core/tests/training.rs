use mlvc::data::{Corpus, Dataset, Split};
use mlvc::model::{flops_per_step, init_params, ModelConfig};
use mlvc::projection::{decoalesce_model, interpolate, LevelMapping};
use mlvc::train::{
    first_crossing, flops_saving, run_baseline, run_vcycle, Phase, Saving, Schedule, TrainState,
    VCycleConfig,
};
use proptest::prelude::*;

fn corpus() -> Corpus {
    let words = [
        "the ", "quick ", "brown ", "fox ", "jumps ", "over ", "lazy ", "dog", ".\n", ", ",
    ];
    let mut s = String::new();
    let mut x: u64 = 7;
    while s.len() < 20_000 {
        x = x
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        s.push_str(words[(x >> 33) as usize % words.len()]);
    }
    Corpus::from_text(s)
}

fn setup(steps: usize) -> (Dataset, ModelConfig, VCycleConfig) {
    let data = Dataset::new(&corpus());
    let config = ModelConfig::new(2, 2, 4, data.vocab.size(), 16);
    let mut vc = VCycleConfig::with_steps(steps);
    vc.batch_size = 4;
    vc.seq_len = 16;
    vc.warmup_steps = 4;
    vc.eval_interval = 5;
    vc.val_batches = 2;
    vc.e_small = Some(6);
    (data, config, vc)
}

#[test]
fn runs_are_deterministic_at_both_precisions() {
    let (data, config, mut vc) = setup(12);
    let a = run_vcycle::<f64>(&config, &vc, &data).unwrap();
    let b = run_vcycle::<f64>(&config, &vc, &data).unwrap();
    assert_eq!(a.params, b.params);
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert_eq!(
            (x.train_loss, x.val_loss, x.cum_flops),
            (y.train_loss, y.val_loss, y.cum_flops)
        );
    }
    vc.dtype = mlvc::DType::F32;
    let c = run_vcycle::<f32>(&config, &vc, &data).unwrap();
    let d = run_vcycle::<f32>(&config, &vc, &data).unwrap();
    for (x, y) in c.metrics.iter().zip(&d.metrics) {
        assert!((x.train_loss - y.train_loss).abs() <= 1e-5);
    }
}

#[test]
fn a_different_seed_changes_the_run() {
    let (data, config, mut vc) = setup(5);
    let a = run_baseline::<f64>(&config, &vc, &data).unwrap();
    vc.seed = 1;
    let b = run_baseline::<f64>(&config, &vc, &data).unwrap();
    assert_ne!(a.metrics[0].train_loss, b.metrics[0].train_loss);
}

#[test]
fn ledger_is_exact_and_monotone() {
    let (data, config, vc) = setup(10);
    let out = run_vcycle::<f64>(&config, &vc, &data).unwrap();
    let small = LevelMapping::halving(&config).unwrap().config_small;
    let (b, s) = (vc.batch_size, vc.seq_len);
    let large_steps = (vc.e_a() + vc.total_steps) as u64;
    let want = large_steps * flops_per_step(&config, b, s)
        + vc.e_small() as u64 * flops_per_step(&small, b, s);
    assert_eq!(out.ledger.total_flops(), want);
    assert!(out
        .metrics
        .windows(2)
        .all(|w| w[0].cum_flops < w[1].cum_flops && w[0].step + 1 == w[1].step));
    assert_eq!(out.metrics.last().unwrap().cum_flops, want);
    let phases: Vec<Phase> = out.ledger.entries.iter().map(|e| e.phase).collect();
    assert_eq!(phases, [Phase::Init, Phase::Small, Phase::Final]);
}

#[test]
fn single_level_matches_the_baseline() {
    let (data, config, mut vc) = setup(8);
    vc.levels = 1;
    let a = run_baseline::<f64>(&config, &vc, &data).unwrap();
    let b = run_vcycle::<f64>(&config, &vc, &data).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.metrics.len(), b.metrics.len());
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.val_loss.map(f64::to_bits), y.val_loss.map(f64::to_bits));
        assert_eq!((x.lr, x.cum_flops), (y.lr, y.cum_flops));
    }
}

#[test]
fn validation_is_logged_on_interval_and_phase_ends() {
    let (data, config, vc) = setup(7);
    let out = run_vcycle::<f64>(&config, &vc, &data).unwrap();
    // init 4 steps, small 6, final 7: globals 1..=17
    let logged: Vec<u64> = out
        .metrics
        .iter()
        .filter(|r| r.val_loss.is_some())
        .map(|r| r.step)
        .collect();
    assert_eq!(logged, [4, 5, 10, 15, 17]);
}

#[test]
fn moments_restart_after_interpolation() {
    let config = ModelConfig::new(2, 2, 4, 12, 8);
    let m = LevelMapping::halving(&config).unwrap();
    let large = init_params::<f64>(&config, 0).unwrap();
    let small = init_params::<f64>(&m.config_small, 1).unwrap();
    let mixed = interpolate(&large, &decoalesce_model(&small, &m).unwrap(), 0.25).unwrap();
    let state = TrainState::fresh(&mixed);
    assert!(state.moments_are_zero());
    assert_eq!(state.step, 0);
    assert_eq!(state.m.num_params(), mixed.num_params());
}

#[test]
fn train_and_validation_ranges_are_disjoint() {
    let data = Dataset::new(&corpus());
    let (t0, t1) = data.range(Split::Train);
    let (v0, v1) = data.range(Split::Val);
    assert!(t1 <= v0 && t0 < t1 && v0 < v1);
    let seq = 16;
    for b in data.val_batches(4, 3, seq).unwrap() {
        for &o in &b.offsets {
            assert!(o >= v0 && o + seq < v1);
        }
    }
    let mut stream = data.stream(3, seq, 9).unwrap();
    for _ in 0..50 {
        let b = stream.next().unwrap();
        for (r, &o) in b.offsets.iter().enumerate() {
            assert!(o >= t0 && o + seq < t1);
            assert_eq!(
                &b.inputs[r * seq + 1..(r + 1) * seq],
                &b.targets[r * seq..(r + 1) * seq - 1]
            );
        }
    }
}

#[test]
fn crossing_uses_full_size_rows_only() {
    let (data, config, vc) = setup(6);
    let out = run_vcycle::<f64>(&config, &vc, &data).unwrap();
    let any = out
        .metrics
        .iter()
        .filter_map(|r| r.val_loss)
        .fold(f64::INFINITY, f64::min);
    if let Some(c) = first_crossing(&out.metrics, any + 10.0) {
        assert_eq!(out.metrics[(c.step - 1) as usize].level, 1);
    }
    match flops_saving(&out.metrics, &out.metrics, out.final_val_loss().unwrap()) {
        Saving::Reached { flops, .. } => assert_eq!(flops, 0.0),
        Saving::NotReached { .. } => panic!("a run reaches its own final loss"),
    }
    assert!(matches!(
        flops_saving(&out.metrics, &out.metrics, -1.0),
        Saving::NotReached { .. }
    ));
}

proptest! {
    #[test]
    fn schedule_shape(peak in 1e-5f64..1.0, warmup in 0usize..50, extra in 1usize..200) {
        let total = warmup + extra;
        let s = Schedule::new(peak, warmup, total);
        prop_assert_eq!(s.lr(0), if warmup == 0 { peak } else { 0.0 });
        prop_assert!((s.lr(warmup) - peak).abs() < 1e-12 * peak);
        for t in 0..warmup {
            prop_assert!(s.lr(t) < s.lr(t + 1));
        }
        for t in warmup..total {
            prop_assert!(s.lr(t + 1) <= s.lr(t));
        }
        prop_assert!(s.lr(total).abs() < 1e-12);
    }
}
