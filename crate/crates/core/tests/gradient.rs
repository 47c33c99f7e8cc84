//! Central finite differences against the analytic backward pass of the full
//! objective, over every trainable scalar.

use ortho_hydra_core::adapter::{AdapterState, Variant};
use ortho_hydra_core::harness::{Batch, Objective, Stack};
use ortho_hydra_core::losses::BalanceConfig;
use ortho_hydra_core::router::{PoolKind, RouterConfig, RouterInput};
use ortho_hydra_core::{Matrix, SeqBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const D: usize = 12;
const L: usize = 5;
const B: usize = 2;
const E: usize = 3;
const R: usize = 2;

fn rand_seq(rng: &mut ChaCha8Rng, b: usize, l: usize, d: usize) -> SeqBatch {
    SeqBatch::from_fn(b, l, d, |_, _, _| rng.sample(StandardNormal))
}

fn randomize(stack: &mut Stack, rng: &mut ChaCha8Rng, scale: f64) {
    for layer in &mut stack.layers {
        for (_, p) in layer.params_mut() {
            for v in p.iter_mut() {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
}

fn w0(rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(D, D, |_, _| rng.sample::<f64, _>(StandardNormal) / (D as f64).sqrt())
}

fn batch(rng: &mut ChaCha8Rng) -> Batch {
    Batch {
        x: rand_seq(rng, B, L, D),
        target: rand_seq(rng, B, L, D),
        styles: vec![0; B],
        sigma: vec![0.3, 0.8],
    }
}

/// Returns the largest relative error `|a − n| / max(|a|, |n|, floor)`.
fn check(stack: &Stack, batch: &Batch, obj: &Objective, step: usize, total: usize) -> f64 {
    let (_, grads, _) = stack.loss_and_grad(batch, obj, step, total).unwrap();
    // Five-point stencil: truncation O(h⁴), rounding O(ε/h).
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut probe = stack.clone();
    for (l, g) in grads.iter().enumerate() {
        let analytic: Vec<Vec<f64>> = g.slices().iter().map(|(_, s)| s.to_vec()).collect();
        for (pi, a_vals) in analytic.iter().enumerate() {
            for (i, &a) in a_vals.iter().enumerate() {
                let orig = probe.layers[l].params_mut()[pi].1[i];
                let mut at = |delta: f64| {
                    probe.layers[l].params_mut()[pi].1[i] = orig + delta;
                    probe.loss(batch, obj, step, total).unwrap().total()
                };
                let n = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
                probe.layers[l].params_mut()[pi].1[i] = orig;
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

fn router(input: RouterInput, pool: PoolKind) -> RouterConfig {
    RouterConfig {
        pool,
        input,
        sigma_dim: 2,
        ..RouterConfig::default()
    }
}

fn task_only() -> Objective {
    Objective {
        balance: BalanceConfig {
            weight: 0.0,
            ..BalanceConfig::default()
        },
        lo_weight: 0.0,
        lo_eps: 1e-6,
        lv_weight: 0.0,
    }
}

#[test]
fn ortho_task_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let st = AdapterState::init_ortho(w0(&mut rng), E, R, 2.0, 5, router(RouterInput::Bottleneck, PoolKind::Rms)).unwrap();
    let mut stack = Stack { layers: vec![st] };
    randomize(&mut stack, &mut rng, 0.5);
    let b = batch(&mut rng);
    let err = check(&stack, &b, &task_only(), 0, 1);
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn all_terms_and_two_layers_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = router(RouterInput::Bottleneck, PoolKind::Rms);
    let layers = (0..2)
        .map(|i| AdapterState::init_ortho(w0(&mut rng), E, R, 2.0, i, cfg.clone()).unwrap())
        .collect();
    let mut stack = Stack { layers };
    randomize(&mut stack, &mut rng, 0.5);
    let obj = Objective {
        balance: BalanceConfig {
            weight: 0.7,
            warmup_ratio: 0.0,
            per_bucket_coeff: 0.3,
            bucket_count: 4,
            soft_counts: false,
        },
        lo_weight: 0.05,
        lo_eps: 1e-3,
        lv_weight: 0.4,
    };
    let b = batch(&mut rng);
    let err = check(&stack, &b, &obj, 0, 10);
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn baselines_match_finite_differences() {
    for (variant, input, pool) in [
        (Variant::Naive, RouterInput::Raw, PoolKind::Rms),
        (Variant::Jittered { sigma: 0.3 }, RouterInput::Bottleneck, PoolKind::Mean),
        (Variant::Jittered { sigma: 0.3 }, RouterInput::Raw, PoolKind::Max),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let st = AdapterState::init_baseline(w0(&mut rng), variant, E, R, 2.0, 3, router(input, pool)).unwrap();
        let mut stack = Stack { layers: vec![st] };
        randomize(&mut stack, &mut rng, 0.5);
        let obj = Objective {
            balance: BalanceConfig {
                weight: 0.5,
                warmup_ratio: 0.0,
                soft_counts: true,
                ..BalanceConfig::default()
            },
            lo_weight: 0.1,
            lo_eps: 1e-3,
            lv_weight: 0.2,
        };
        let b = batch(&mut rng);
        let err = check(&stack, &b, &obj, 0, 10);
        assert!(err < 1e-5, "{variant:?} {input:?} {pool:?}: max relative error {err:e}");
    }
}
