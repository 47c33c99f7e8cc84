//! Invariant suite behind `verify`.

use ortho_hydra_core::adapter::{AdapterState, Variant};
use ortho_hydra_core::cayley::{cayley_forward, CayleySeed};
use ortho_hydra_core::harness::{run_experiment, Batch, Objective, Stack, TaskSpec, TrainConfig, VariantKind};
use ortho_hydra_core::linalg::gram;
use ortho_hydra_core::losses::BalanceConfig;
use ortho_hydra_core::router::{RouterConfig, RouterInput};
use ortho_hydra_core::{Matrix, SeqBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const ORTHO_TOL: f64 = 1e-10;
pub const FD_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Group {
    Cayley,
    Gram,
    Gradient,
    Deadlock,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Cayley, Group::Gram, Group::Gradient, Group::Deadlock];

    pub fn name(&self) -> &'static str {
        match self {
            Group::Cayley => "cayley",
            Group::Gram => "gram",
            Group::Gradient => "gradient",
            Group::Deadlock => "deadlock",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub group: Group,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
    pub checks: usize,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn report(group: Group, worst: f64, tolerance: f64, checks: usize) -> Report {
    Report {
        group,
        passed: worst < tolerance,
        worst,
        tolerance,
        checks,
    }
}

pub fn run(group: Group, seed: u64, trials: usize) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match group {
        Group::Cayley => {
            let mut worst = 0.0f64;
            for t in 0..trials {
                let r = [2, 8, 32][t % 3];
                let seed = CayleySeed::new(gaussian(&mut rng, r, r, 1.0)).expect("finite square");
                worst = worst.max(cayley_forward(&seed).orthonormality_defect());
            }
            report(group, worst, ORTHO_TOL, trials)
        }
        Group::Gram => {
            let mut worst = 0.0f64;
            let (e, r, d) = (4, 4, 32);
            let w0 = gaussian(&mut rng, d, d, 1.0);
            let mut st = AdapterState::init_ortho(w0, e, r, 4.0, seed, RouterConfig::default()).expect("valid sizes");
            for _ in 0..trials {
                for (_, p) in st.params_mut() {
                    p.iter_mut().for_each(|v| *v = rng.sample::<f64, _>(StandardNormal));
                }
                let (q_eff, p_eff) = st.effective_bases().expect("ortho");
                worst = worst.max(q_eff.transpose().orthonormality_defect());
                for i in 0..e {
                    worst = worst.max(p_eff[i].orthonormality_defect());
                    for j in 0..e {
                        if i != j {
                            worst = worst.max(gram(&p_eff[i], &p_eff[j]).expect("same rows").frobenius_norm());
                        }
                    }
                }
            }
            report(group, worst, ORTHO_TOL, trials)
        }
        Group::Gradient => {
            let mut worst = 0.0f64;
            for t in 0..trials {
                worst = worst.max(gradient_trial(&mut rng, t));
            }
            report(group, worst, FD_TOL, trials)
        }
        Group::Deadlock => {
            let mut cfg = TrainConfig::toy(VariantKind::Naive);
            cfg.task = TaskSpec {
                d_model: 16,
                seq_len: 8,
                ..TaskSpec::default()
            };
            cfg.experts = 3;
            cfg.rank = 2;
            cfg.total_steps = 200;
            cfg.freeze_router = true;
            cfg.log_every = 10;
            cfg.seed = seed;
            let mut worst = 0.0f64;
            let runs = trials.clamp(1, 3);
            for k in 0..runs {
                cfg.seed = seed.wrapping_add(k as u64);
                match run_experiment(&cfg) {
                    Ok(log) => {
                        for row in &log.rows {
                            worst = worst.max(row.expert_divergence);
                        }
                    }
                    Err(_) => worst = f64::INFINITY,
                }
            }
            report(group, worst, ORTHO_TOL, runs)
        }
    }
}

/// Largest relative error between the analytic gradient of the full objective
/// and central differences, over every trainable scalar of one random model.
fn gradient_trial(rng: &mut ChaCha8Rng, t: usize) -> f64 {
    let (d, len, batch, e, r) = (12, 5, 2, 3, 2);
    let router = RouterConfig {
        sigma_dim: 2,
        input: if t % 4 == 3 { RouterInput::Raw } else { RouterInput::Bottleneck },
        ..RouterConfig::default()
    };
    let w0 = gaussian(rng, d, d, 1.0 / (d as f64).sqrt());
    let st = match t % 3 {
        0 => AdapterState::init_ortho(w0, e, r, 2.0, t as u64, router),
        1 => AdapterState::init_baseline(w0, Variant::Naive, e, r, 2.0, t as u64, router),
        _ => AdapterState::init_baseline(w0, Variant::Jittered { sigma: 0.3 }, e, r, 2.0, t as u64, router),
    }
    .expect("valid sizes");
    let mut stack = Stack { layers: vec![st] };
    for (_, p) in stack.layers[0].params_mut() {
        p.iter_mut().for_each(|v| *v = 0.5 * rng.sample::<f64, _>(StandardNormal));
    }
    let seq = |rng: &mut ChaCha8Rng| SeqBatch::from_fn(batch, len, d, |_, _, _| rng.sample(StandardNormal));
    let data = Batch {
        x: seq(rng),
        target: seq(rng),
        styles: vec![0; batch],
        sigma: (0..batch).map(|_| rng.random::<f64>()).collect(),
    };
    let obj = Objective {
        balance: BalanceConfig {
            weight: 0.3,
            warmup_ratio: 0.0,
            soft_counts: true,
            ..BalanceConfig::default()
        },
        lo_weight: 0.05,
        lo_eps: 1e-3,
        lv_weight: 0.2,
    };
    let Ok((_, grads, _)) = stack.loss_and_grad(&data, &obj, 0, 1) else {
        return f64::INFINITY;
    };
    let analytic: Vec<Vec<f64>> = grads[0].slices().iter().map(|(_, s)| s.to_vec()).collect();
    // Five-point stencil: truncation O(h⁴), rounding O(ε/h).
    let h = 1e-4;
    let mut worst = 0.0f64;
    let eval = |s: &Stack| s.loss(&data, &obj, 0, 1).map_or(f64::NAN, |p| p.total());
    for (pi, values) in analytic.iter().enumerate() {
        for (i, &a) in values.iter().enumerate() {
            let orig = stack.layers[0].params_mut()[pi].1[i];
            let mut at = |delta: f64| {
                stack.layers[0].params_mut()[pi].1[i] = orig + delta;
                eval(&stack)
            };
            let n = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            stack.layers[0].params_mut()[pi].1[i] = orig;
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
        }
    }
    worst
}
