//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::time::Instant;

use ortho_hydra_core::adapter::{AdapterParams, AdapterState, ParamId, Variant};
use ortho_hydra_core::cayley::{cayley_forward, CayleySeed};
use ortho_hydra_core::harness::{
    entropy_summary, train, Batch, Objective, Stack, TrainConfig, TrainOutcome, VariantKind,
};
use ortho_hydra_core::losses::{switch_balance, BalanceConfig};
use ortho_hydra_core::router::{pool, BandLayout, PoolKind, RouterConfig, RouterInput, RouterState};
use ortho_hydra_core::{Matrix, SeqBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn c1_orthogonality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut count = 0;
    for r in [2usize, 8, 32] {
        for _ in 0..1000 {
            let s = Matrix::from_fn(r, r, |_, _| gaussian(&mut rng));
            let rot = cayley_forward(&CayleySeed::new(s).unwrap());
            let defect = rot.transpose().matmul(&rot).unwrap().sub(&Matrix::identity(r)).unwrap();
            worst = worst.max(defect.frobenius_norm());
            count += 1;
        }
    }
    verdict(worst < 1e-10, format!("{count} seeds, max ||R^T R - I||_F = {worst:.2e}"))
}

fn c2_disjointness() -> Verdict {
    let mut cfg = TrainConfig::toy(VariantKind::Ortho);
    cfg.total_steps = 500;
    let out = train(&cfg).unwrap();
    let worst = out.log.rows.iter().map(|r| r.cross_gram_max).fold(0.0, f64::max);
    let final_gram = out.stack.layers.iter().map(|l| l.max_cross_gram()).fold(0.0, f64::max);
    let worst = worst.max(final_gram);
    verdict(
        worst < 1e-10,
        format!("{} logged steps, max ||P_i^T P_j||_F = {worst:.2e}", out.log.rows.len()),
    )
}

const GD: usize = 12;
const GL: usize = 5;
const GB: usize = 2;
const GE: usize = 3;
const GR: usize = 2;

fn max_fd_error(stack: &Stack, batch: &Batch, obj: &Objective) -> f64 {
    let (_, grads, _) = stack.loss_and_grad(batch, obj, 0, 10).unwrap();
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut probe = stack.clone();
    for (l, g) in grads.iter().enumerate() {
        let analytic: Vec<Vec<f64>> = g.slices().iter().map(|(_, s)| s.to_vec()).collect();
        for (pi, vals) in analytic.iter().enumerate() {
            for (i, &a) in vals.iter().enumerate() {
                let orig = probe.layers[l].params_mut()[pi].1[i];
                let mut at = |delta: f64| {
                    probe.layers[l].params_mut()[pi].1[i] = orig + delta;
                    probe.loss(batch, obj, 0, 10).unwrap().total()
                };
                // Central five-point difference.
                let n = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
                probe.layers[l].params_mut()[pi].1[i] = orig;
                worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
            }
        }
    }
    worst
}

fn c3_gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let router = |input| RouterConfig {
        pool: PoolKind::Rms,
        input,
        sigma_dim: 2,
        ..RouterConfig::default()
    };
    let obj = Objective {
        balance: BalanceConfig {
            weight: 0.5,
            warmup_ratio: 0.0,
            ..BalanceConfig::default()
        },
        lo_weight: 0.05,
        lo_eps: 1e-3,
        lv_weight: 0.3,
    };
    let mut worst = 0.0f64;
    let mut scalars = 0;
    let cases = [
        (Variant::Ortho, RouterInput::Bottleneck),
        (Variant::Naive, RouterInput::Raw),
        (Variant::Jittered { sigma: 0.2 }, RouterInput::Raw),
    ];
    for (variant, input) in cases {
        let w0 = Matrix::from_fn(GD, GD, |_, _| gaussian(&mut rng) / (GD as f64).sqrt());
        let layer = match variant {
            Variant::Ortho => AdapterState::init_ortho(w0, GE, GR, 2.0, 7, router(input)),
            v => AdapterState::init_baseline(w0, v, GE, GR, 2.0, 7, router(input)),
        }
        .unwrap();
        let mut stack = Stack { layers: vec![layer] };
        for (_, p) in stack.layers[0].params_mut() {
            p.iter_mut().for_each(|v| *v = 0.5 * gaussian(&mut rng));
            scalars += p.len();
        }
        let batch = Batch {
            x: SeqBatch::from_fn(GB, GL, GD, |_, _, _| gaussian(&mut rng)),
            target: SeqBatch::from_fn(GB, GL, GD, |_, _, _| gaussian(&mut rng)),
            styles: vec![0; GB],
            sigma: vec![0.2, 0.7],
        };
        worst = worst.max(max_fd_error(&stack, &batch, &obj));
    }
    verdict(worst < 1e-5, format!("{scalars} scalars over 3 variants, max relative error {worst:.2e}"))
}

fn c4_deadlock() -> Verdict {
    let mut cfg = TrainConfig::toy(VariantKind::Naive);
    cfg.total_steps = 1000;
    cfg.freeze_router = true;
    let out = train(&cfg).unwrap();
    let div = out.stack.layers.iter().map(|l| l.expert_divergence()).fold(0.0, f64::max);
    let moved = out
        .stack
        .layers
        .iter()
        .map(|l| l.expert_heads()[0].frobenius_norm())
        .fold(0.0, f64::max);
    verdict(
        div < 1e-10 && moved > 0.0,
        format!("1000 steps, ||B_0||_F = {moved:.3e}, max ||B_e - B_e'||_F = {div:.2e}"),
    )
}

fn toy_runs() -> Vec<(VariantKind, TrainOutcome, f64)> {
    std::thread::scope(|s| {
        let handles: Vec<_> = VariantKind::ALL
            .into_iter()
            .map(|v| {
                s.spawn(move || {
                    let t = Instant::now();
                    let out = train(&TrainConfig::toy(v)).unwrap();
                    (v, out, t.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn c5_cold_start(runs: &[(VariantKind, TrainOutcome, f64)]) -> Verdict {
    let cfg = TrainConfig::toy(VariantKind::Ortho);
    let mut ok = true;
    let mut parts = Vec::new();
    for (v, out, secs) in runs {
        let s = entropy_summary(&out.log, cfg.onset_threshold);
        let pass = match v {
            VariantKind::Ortho => s.final_entropy < 0.9 && s.alive == cfg.experts,
            _ => s.final_entropy > 0.99,
        };
        ok &= pass;
        parts.push(format!(
            "{} H={:.4} alive={}/{} onset={:?} ({secs:.0}s)",
            v.name(),
            s.final_entropy,
            s.alive,
            cfg.experts,
            s.onset
        ));
    }
    verdict(ok, parts.join(", "))
}

fn c6_loss_parity(runs: &[(VariantKind, TrainOutcome, f64)]) -> Verdict {
    let losses: Vec<f64> = runs.iter().map(|(_, o, _)| o.log.eval.task_loss).collect();
    let lo = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().cloned().fold(0.0, f64::max);
    let ratio = hi / lo;
    let named: Vec<String> =
        runs.iter().zip(&losses).map(|((v, _, _), l)| format!("{}={l:.4}", v.name())).collect();
    verdict(ratio <= 1.2, format!("eval task loss {}, max/min = {ratio:.4}", named.join(" ")))
}

fn c7_symmetry() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let (d, e, r) = (16, 4, 2);
    let w0 = Matrix::from_fn(d, d, |_, _| gaussian(&mut rng) / (d as f64).sqrt());
    let router = RouterConfig {
        sigma_dim: 2,
        ..RouterConfig::default()
    };
    let layer = AdapterState::init_ortho(w0, e, r, 2.0, 9, router).unwrap();
    let x = SeqBatch::from_fn(3, 6, d, |_, _, _| gaussian(&mut rng));
    // Target equals the init output, so only the soft regularizers carry gradient.
    let target = layer.base_forward(&x);
    let stack = Stack { layers: vec![layer] };
    let batch = Batch {
        x,
        target,
        styles: vec![0; 3],
        sigma: vec![0.1, 0.5, 0.9],
    };
    let obj = Objective {
        balance: BalanceConfig {
            weight: 0.0,
            ..BalanceConfig::default()
        },
        lo_weight: 1.0,
        lo_eps: 1e-6,
        lv_weight: 1.0,
    };
    let (_, grads, _) = stack.loss_and_grad(&batch, &obj, 0, 1).unwrap();
    let g = &grads[0];
    let mut per_expert: Vec<Vec<f64>> = vec![Vec::new(); e];
    for (id, s) in g.slices() {
        if let Some(k) = id.expert() {
            per_expert[k].extend_from_slice(s);
        }
    }
    let w = &g.router.weights;
    for (k, v) in per_expert.iter_mut().enumerate() {
        v.extend(w.column(k));
        v.push(g.router.bias[k]);
    }
    let mut max_diff = 0.0f64;
    for k in 1..e {
        for (a, b) in per_expert[0].iter().zip(&per_expert[k]) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    let lambda_ok = matches!(&stack.layers[0].params, AdapterParams::Ortho(p) if p.lambda.iter().all(|v| *v == 0.0));
    let scalars = per_expert[0].len();
    let seeds = g.slices().iter().filter(|(id, _)| matches!(id, ParamId::SeedP(_))).count();
    verdict(
        max_diff == 0.0 && lambda_ok && seeds == e,
        format!("{e} experts x {scalars} per-expert scalars, max cross-expert difference {max_diff:e}"),
    )
}

fn c8_balance_schedule(runs: &[(VariantKind, TrainOutcome, f64)]) -> Verdict {
    let cfg = BalanceConfig::default();
    let schedule_ok = cfg.turn_on_step(28164) == 11266;
    let gates = Matrix::from_rows(&[[0.9, 0.05, 0.05], [0.8, 0.1, 0.1], [0.7, 0.2, 0.1], [0.9, 0.1, 0.0]]);
    let ids = [0usize, 1, 2, 3];
    let n = 1000;
    let on = cfg.turn_on_step(n);
    let before = switch_balance(&gates, on - 1, n, &cfg, &ids).unwrap();
    let after = switch_balance(&gates, on, n, &cfg, &ids).unwrap();
    let unit_ok = before.0 == 0.0 && before.1.max_abs() == 0.0 && after.0 > 0.0;

    let (_, ortho, _) = runs.iter().find(|(v, _, _)| *v == VariantKind::Ortho).expect("ortho run");
    let log = &ortho.log;
    let turn_on = log.balance_turn_on;
    let zero_before = log.rows.iter().filter(|r| r.step < turn_on).all(|r| r.balance_loss == 0.0);
    let at = |s: usize| log.rows.iter().find(|r| r.step == s).map(|r| r.entropy_mean);
    let threshold = TrainConfig::toy(VariantKind::Ortho).onset_threshold;
    let (h0, h50) = (at(turn_on), at(turn_on + 50));
    let bump_ok = match (h0, h50) {
        (Some(h0), Some(h50)) => h0 >= threshold || h50 - h0 >= 0.0,
        _ => false,
    };
    let positive_after = log.rows.iter().any(|r| r.step >= turn_on && r.balance_loss > 0.0);
    verdict(
        schedule_ok && unit_ok && zero_before && positive_after && bump_ok,
        format!(
            "turn-on(28164) = {}, before = {:e}, after = {:.3e}, toy turn-on {turn_on}: H {:.4} -> {:.4} at +50",
            cfg.turn_on_step(28164),
            before.0,
            after.0,
            h0.unwrap_or(f64::NAN),
            h50.unwrap_or(f64::NAN)
        ),
    )
}

fn c9_pooling() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let (batch, dim, sigma_x) = (64, 64, 0.7);
    let mut ok = true;
    let mut parts = Vec::new();
    for len in [64usize, 1024, 4096] {
        let seq = SeqBatch::from_fn(batch, len, dim, |_, _, _| sigma_x * gaussian(&mut rng));
        let mean = pool(&seq, PoolKind::Mean).unwrap();
        let rms = pool(&seq, PoolKind::Rms).unwrap();
        let m = mean.as_slice();
        let avg = m.iter().sum::<f64>() / m.len() as f64;
        let std = (m.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (m.len() - 1) as f64).sqrt();
        let law = sigma_x / (len as f64).sqrt();
        let std_err = (std / law - 1.0).abs();
        // Per-channel RMS over the whole corpus is the reference for the pooled RMS.
        let mut channel_rms = vec![0.0; dim];
        for b in 0..batch {
            for t in 0..len {
                for (c, v) in seq.token(b, t).iter().enumerate() {
                    channel_rms[c] += v * v;
                }
            }
        }
        let mut rms_err = 0.0f64;
        for c in 0..dim {
            let reference = (channel_rms[c] / (batch * len) as f64).sqrt();
            let pooled = (0..batch).map(|b| rms[(b, c)]).sum::<f64>() / batch as f64;
            rms_err = rms_err.max((pooled / reference - 1.0).abs());
        }
        ok &= std_err < 0.10 && rms_err < 0.05;
        parts.push(format!("L={len}: std/law-1 = {std_err:.3}, rms err = {rms_err:.3}"));
    }
    verdict(ok, parts.join("; "))
}

fn c10_fallback() -> Verdict {
    let mut cfg = TrainConfig::toy(VariantKind::Ortho);
    cfg.task.d_model = 12;
    cfg.task.seq_len = 32;
    cfg.experts = 4;
    cfg.rank = 4;
    cfg.total_steps = 200;
    cfg.expert_warmup_ratio = 0.25;
    let task = cfg.build_task().unwrap();
    let stack = cfg.build_stack(&task).unwrap();
    let layer = &stack.layers[0];
    let replicated = match &layer.params {
        AdapterParams::Ortho(p) => p.p_bases.iter().all(|b| *b == p.p_bases[0]),
        _ => false,
    };
    let flagged = layer.fallback_shared_basis && !layer.warnings.is_empty();
    let out = train(&cfg).unwrap();
    let warned = out.log.warnings.iter().any(|w| w.contains("shared basis"));
    let warmup_end = (cfg.expert_warmup_ratio * cfg.total_steps as f64).ceil() as usize;
    let div = out
        .log
        .rows
        .iter()
        .filter(|r| r.step >= warmup_end)
        .map(|r| r.expert_divergence)
        .fold(0.0, f64::max);
    verdict(
        flagged && replicated && warned && div > 0.0,
        format!(
            "flag={flagged} replicated={replicated} warning={warned}, divergence after step {warmup_end} = {div:.3e}"
        ),
    )
}

fn c11_band_masking() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let (experts, bands, width) = (12, 4, 6);
    let cfg = RouterConfig {
        sigma_dim: 4,
        band_count: bands,
        band_layout: BandLayout::Interleaved,
        input: RouterInput::Raw,
        ..RouterConfig::default()
    };
    let mut router = RouterState::zeroed(cfg.clone(), experts, width).unwrap();
    router.weights.as_mut_slice().iter_mut().for_each(|v| *v = 3.0 * gaussian(&mut rng));
    router.bias.iter_mut().for_each(|v| *v = 3.0 * gaussian(&mut rng));
    let n = 400;
    let pooled = Matrix::from_fn(n, width, |_, _| gaussian(&mut rng));
    let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let gates = router.route(&pooled, &sigma).unwrap().gates;
    let mut ok = true;
    let mut outside_max = 0.0f64;
    for (b, s) in sigma.iter().enumerate() {
        let band = cfg.band_of(*s).unwrap();
        let row = gates.row(b);
        for (e, p) in row.iter().enumerate() {
            if e % bands == band {
                ok &= *p > 0.0;
            } else {
                ok &= *p == 0.0;
                outside_max = outside_max.max(*p);
            }
        }
        ok &= (row.iter().sum::<f64>() - 1.0).abs() < 1e-12;
    }
    verdict(ok, format!("{n} samples, E={experts}, B={bands}, max out-of-band probability {outside_max:e}"))
}

fn main() {
    let start = Instant::now();
    let runs = toy_runs();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("1 orthogonality exactness", Box::new(c1_orthogonality)),
        ("2 disjointness preservation", Box::new(c2_disjointness)),
        ("3 gradient correctness", Box::new(c3_gradients)),
        ("4 deadlock exactness", Box::new(c4_deadlock)),
        ("5 cold-start ordering", Box::new(|| c5_cold_start(&runs))),
        ("6 loss parity", Box::new(|| c6_loss_parity(&runs))),
        ("7 soft-regularizer symmetry", Box::new(c7_symmetry)),
        ("8 balance-loss schedule", Box::new(|| c8_balance_schedule(&runs))),
        ("9 pooling law", Box::new(c9_pooling)),
        ("10 fallback behavior", Box::new(c10_fallback)),
        ("11 sigma-band masking", Box::new(c11_band_masking)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let t = Instant::now();
        let v = check();
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {name}: {} ({:.1}s)", v.detail, t.elapsed().as_secs_f64());
        failed += usize::from(!v.passed);
    }
    println!(
        "acceptance: {}/{} passed in {:.0}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
