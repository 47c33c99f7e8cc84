//! Synthetic task, training loop and run metrics for the three-variant
//! cold-start experiment.

mod model;
mod task;

pub use model::{LossParts, Objective, Stack, StackPass};
pub use task::{Batch, FitReport, SyntheticTask, TaskLayer, TaskSpec};

pub use crate::optim::{adamw_step, AdamWConfig, Moments};

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapter::{AdapterState, Variant};
use crate::linalg::Matrix;
use crate::losses::{sigma_bucket, BalanceConfig};
use crate::router::{normalized_entropy, RouterConfig, RouterInput};
use crate::{Error, Result};

// Independent ChaCha streams drawn from one seed.
const STREAM_TASK: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_PROBE: u64 = 2;
const STREAM_WARMUP: u64 = 3;
const STREAM_EVAL: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum VariantKind {
    Ortho,
    Naive,
    Jittered,
}

impl VariantKind {
    pub const ALL: [VariantKind; 3] = [VariantKind::Naive, VariantKind::Jittered, VariantKind::Ortho];

    pub fn name(&self) -> &'static str {
        match self {
            VariantKind::Ortho => "ortho",
            VariantKind::Naive => "naive",
            VariantKind::Jittered => "jittered",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub variant: VariantKind,
    pub experts: usize,
    pub rank: usize,
    pub alpha: f64,
    /// Adapter optimizer; `optim.lr` is the adapter learning rate.
    pub optim: AdamWConfig,
    /// Router learning rate as a multiple of the adapter's.
    pub router_lr_mult: f64,
    pub freeze_router: bool,
    pub total_steps: usize,
    pub batch_size: usize,
    pub balance: BalanceConfig,
    pub jitter_sigma: f64,
    pub lo_weight: f64,
    pub lo_eps: f64,
    pub lv_weight: f64,
    pub router: RouterConfig,
    /// What the router pools. Unset: the bottleneck for ortho, the raw
    /// input for the baselines.
    pub router_input: Option<RouterInput>,
    /// Fraction of steps during which only one random expert per layer
    /// receives gradient.
    pub expert_warmup_ratio: f64,
    pub task: TaskSpec,
    pub log_every: usize,
    /// Samples in the fixed probe batch used for logged routing metrics.
    pub probe_size: usize,
    /// Held-out samples for the end-of-run evaluation.
    pub eval_size: usize,
    /// Threshold on H̄ that marks de-uniformization.
    pub onset_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy(VariantKind::Ortho)
    }
}

impl TrainConfig {
    /// Desk-scale preset: `d = 64, L = 128, E = 4, r = 4`, four styles.
    pub fn toy(variant: VariantKind) -> Self {
        Self {
            variant,
            experts: 4,
            rank: 4,
            alpha: 4.0,
            optim: AdamWConfig {
                lr: 1e-4,
                ..AdamWConfig::default()
            },
            router_lr_mult: 10.0,
            freeze_router: false,
            total_steps: 3000,
            batch_size: 8,
            balance: BalanceConfig {
                weight: 1e-2,
                ..BalanceConfig::default()
            },
            jitter_sigma: 0.1,
            lo_weight: 0.0,
            lo_eps: 1e-6,
            lv_weight: 0.0,
            router: RouterConfig {
                sigma_dim: 4,
                ..RouterConfig::default()
            },
            router_input: None,
            expert_warmup_ratio: 0.0,
            task: TaskSpec::default(),
            log_every: 10,
            probe_size: 16,
            eval_size: 64,
            onset_threshold: 0.95,
            seed: 0,
        }
    }

    /// `d = 256, E = 8, r = 8`.
    pub fn small(variant: VariantKind) -> Self {
        let mut cfg = Self::toy(variant);
        cfg.experts = 8;
        cfg.rank = 8;
        cfg.alpha = 8.0;
        cfg.task.d_model = 256;
        cfg.task.styles = 8;
        cfg
    }

    pub fn preset(name: &str, variant: VariantKind) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy(variant)),
            "small" => Some(Self::small(variant)),
            _ => None,
        }
    }

    pub fn adapter_variant(&self) -> Variant {
        match self.variant {
            VariantKind::Ortho => Variant::Ortho,
            VariantKind::Naive => Variant::Naive,
            VariantKind::Jittered => Variant::Jittered {
                sigma: self.jitter_sigma,
            },
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            balance: self.balance,
            lo_weight: self.lo_weight,
            lo_eps: self.lo_eps,
            lv_weight: self.lv_weight,
        }
    }

    pub fn resolved_router(&self) -> RouterConfig {
        let mut router = self.router.clone();
        router.input = self.router_input.unwrap_or(match self.variant {
            VariantKind::Ortho => RouterInput::Bottleneck,
            VariantKind::Naive | VariantKind::Jittered => RouterInput::Raw,
        });
        router
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.experts == 0 || self.rank == 0 || self.batch_size == 0 || self.log_every == 0 {
            return bad("experts, rank, batch_size and log_every must be >= 1");
        }
        if self.probe_size == 0 || self.eval_size == 0 {
            return bad("probe_size and eval_size must be >= 1");
        }
        if !(self.optim.lr > 0.0) || !(self.router_lr_mult > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(self.alpha.is_finite()) {
            return bad("alpha must be finite");
        }
        if self.variant == VariantKind::Jittered && !(self.jitter_sigma > 0.0) {
            return bad("jitter_sigma must be > 0 for the jittered variant");
        }
        if !(0.0..=1.0).contains(&self.expert_warmup_ratio) {
            return bad("expert_warmup_ratio must lie in [0, 1]");
        }
        if !(self.lo_weight >= 0.0) || !(self.lv_weight >= 0.0) || !(self.lo_eps > 0.0) {
            return bad("lo_weight and lv_weight must be >= 0 and lo_eps > 0");
        }
        self.balance.validate()?;
        self.task.validate()?;
        self.resolved_router().validate()
    }

    /// Builds the adapter stack over the task's frozen base weights.
    pub fn build_stack(&self, task: &SyntheticTask) -> Result<Stack> {
        let router = self.resolved_router();
        let layers = task
            .base_weights()
            .into_iter()
            .enumerate()
            .map(|(l, w0)| {
                let seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(l as u64 + 1);
                match self.variant {
                    VariantKind::Ortho => {
                        AdapterState::init_ortho(w0, self.experts, self.rank, self.alpha, seed, router.clone())
                    }
                    _ => AdapterState::init_baseline(
                        w0,
                        self.adapter_variant(),
                        self.experts,
                        self.rank,
                        self.alpha,
                        seed,
                        router.clone(),
                    ),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Stack { layers })
    }

    pub fn build_task(&self) -> Result<SyntheticTask> {
        let mut rng = stream(self.seed, STREAM_TASK);
        SyntheticTask::new(self.task.clone(), self.experts, self.rank, rng.random())
    }
}

/// One logged step, measured before that step's update.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogRow {
    pub step: usize,
    /// Task loss on the training batch.
    pub task_loss: f64,
    pub balance_loss: f64,
    /// Mean normalized router entropy over layers, on the probe batch.
    pub entropy_mean: f64,
    pub entropy_layers: Vec<f64>,
    /// Argmax share per expert on the probe batch, averaged over layers.
    pub utilization: Vec<f64>,
    /// `bucket × E` argmax shares within each σ-bucket (probe batch).
    pub bucket_utilization: Vec<Vec<f64>>,
    pub grad_norm_total: f64,
    pub grad_norm_router: f64,
    /// Largest `‖H_iᵀH_j‖_F` over expert pairs and layers.
    pub cross_gram_max: f64,
    /// Largest pairwise `‖H_i − H_j‖_F` over expert pairs and layers.
    pub expert_divergence: f64,
}

/// Metrics on the held-out set after the final step.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalSummary {
    pub task_loss: f64,
    pub entropy_mean: f64,
    pub utilization: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainLog {
    pub variant: VariantKind,
    pub experts: usize,
    pub layers: usize,
    pub balance_turn_on: usize,
    pub warnings: Vec<String>,
    pub rows: Vec<LogRow>,
    pub eval: EvalSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub stack: Stack,
}

/// Argmax shares, ties split evenly.
fn argmax_shares(gates: &Matrix, rows: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut out = vec![0.0; gates.cols()];
    let mut n = 0usize;
    for b in rows {
        n += 1;
        let row = gates.row(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners = row.iter().filter(|&&v| v == max).count() as f64;
        for (o, &v) in out.iter_mut().zip(row) {
            if v == max {
                *o += 1.0 / winners;
            }
        }
    }
    if n > 0 {
        out.iter_mut().for_each(|v| *v /= n as f64);
    }
    out
}

struct RoutingStats {
    entropy_layers: Vec<f64>,
    utilization: Vec<f64>,
    bucket_utilization: Vec<Vec<f64>>,
}

fn routing_stats(stack: &Stack, batch: &Batch, buckets: usize) -> Result<(RoutingStats, StackPass)> {
    let pass = stack.forward(&batch.x, &batch.sigma)?;
    let experts = stack.layers[0].experts;
    let layers = pass.caches.len() as f64;
    let mut entropy_layers = Vec::new();
    let mut utilization = vec![0.0; experts];
    let mut bucket_utilization = vec![vec![0.0; experts]; buckets];
    let ids: Vec<usize> = batch.sigma.iter().map(|&s| sigma_bucket(s, buckets)).collect();
    for cache in &pass.caches {
        let g = cache.gates();
        entropy_layers.push(normalized_entropy(g)?);
        let u = argmax_shares(g, 0..g.rows());
        crate::math::axpy(1.0 / layers, &u, &mut utilization);
        for (k, row) in bucket_utilization.iter_mut().enumerate() {
            let u = argmax_shares(g, (0..g.rows()).filter(|&b| ids[b] == k));
            crate::math::axpy(1.0 / layers, &u, row);
        }
    }
    Ok((
        RoutingStats {
            entropy_layers,
            utilization,
            bucket_utilization,
        },
        pass,
    ))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn structure_metrics(stack: &Stack) -> (f64, f64) {
    let mut gram = 0.0f64;
    let mut div = 0.0f64;
    for layer in &stack.layers {
        gram = gram.max(layer.max_cross_gram());
        div = div.max(layer.expert_divergence());
    }
    (gram, div)
}

/// Trains one variant on the synthetic task. Deterministic given `cfg`.
pub fn run_experiment(cfg: &TrainConfig) -> Result<TrainLog> {
    train(cfg).map(|o| o.log)
}

/// As [`run_experiment`], also returning the trained stack.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let task = cfg.build_task()?;
    let mut stack = cfg.build_stack(&task)?;
    let obj = cfg.objective();
    let total = cfg.total_steps;
    let buckets = cfg.balance.bucket_count;

    let mut data_rng = stream(cfg.seed, STREAM_DATA);
    let mut warmup_rng = stream(cfg.seed, STREAM_WARMUP);
    let probe = task.generate_batch(cfg.probe_size, &mut stream(cfg.seed, STREAM_PROBE));
    let warmup_end = crate::math::ceil(cfg.expert_warmup_ratio * total as f64) as usize;

    let mut moments: Vec<Moments> = stack
        .layers
        .iter_mut()
        .flat_map(|l| l.params_mut().into_iter().map(|(_, p)| Moments::zeros(p.len())).collect::<Vec<_>>())
        .collect();

    let warnings = stack
        .layers
        .iter()
        .enumerate()
        .flat_map(|(l, layer)| layer.warnings.iter().map(move |w| alloc::format!("layer {l}: {w}")))
        .collect();

    let mut rows = Vec::new();
    for step in 0..=total {
        let batch = task.generate_batch(cfg.batch_size, &mut data_rng);
        let (parts, mut grads, _) = stack.loss_and_grad(&batch, &obj, step, total)?;
        if !parts.total().is_finite() {
            return Err(Error::NonFiniteLoss { step, layer: None });
        }
        if step < warmup_end {
            for g in grads.iter_mut() {
                let keep = warmup_rng.random_range(0..cfg.experts);
                g.retain_expert(keep);
            }
        }
        if cfg.freeze_router {
            grads.iter_mut().for_each(|g| g.zero_router());
        }
        for (l, g) in grads.iter().enumerate() {
            if g.slices().iter().any(|(_, s)| s.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteLoss { step, layer: Some(l) });
            }
        }

        if step % cfg.log_every == 0 || step == total {
            let (stats, _) = routing_stats(&stack, &probe, buckets)?;
            let (cross, div) = structure_metrics(&stack);
            let router_sq: f64 = grads
                .iter()
                .map(|g| {
                    let w = g.router.weights.as_slice();
                    crate::math::dot(w, w) + crate::math::dot(&g.router.bias, &g.router.bias)
                })
                .sum();
            rows.push(LogRow {
                step,
                task_loss: parts.task,
                balance_loss: parts.balance,
                entropy_mean: mean(&stats.entropy_layers),
                entropy_layers: stats.entropy_layers,
                utilization: stats.utilization,
                bucket_utilization: stats.bucket_utilization,
                grad_norm_total: crate::math::sqrt(grads.iter().map(|g| g.squared_norm()).sum()),
                grad_norm_router: crate::math::sqrt(router_sq),
                cross_gram_max: cross,
                expert_divergence: div,
            });
        }
        if step == total {
            break;
        }

        let t = step as u64 + 1;
        let mut k = 0;
        for (layer, g) in stack.layers.iter_mut().zip(&grads) {
            let grad_slices = g.slices();
            for ((id, p), (gid, gs)) in layer.params_mut().into_iter().zip(grad_slices) {
                debug_assert_eq!(id, gid);
                if !(cfg.freeze_router && id.is_router()) {
                    let lr = if id.is_router() {
                        cfg.optim.lr * cfg.router_lr_mult
                    } else {
                        cfg.optim.lr
                    };
                    adamw_step(p, gs, &mut moments[k], t, lr, &cfg.optim, id.decays())?;
                }
                k += 1;
            }
        }
    }

    let eval_set = task.generate_batch(cfg.eval_size, &mut stream(cfg.seed, STREAM_EVAL));
    let (stats, pass) = routing_stats(&stack, &eval_set, buckets)?;
    let (eval_loss, _) = crate::losses::task_mse(&pass.output, &eval_set.target, None)?;
    let eval = EvalSummary {
        task_loss: eval_loss,
        entropy_mean: mean(&stats.entropy_layers),
        utilization: stats.utilization,
    };
    Ok(TrainOutcome {
        log: TrainLog {
            variant: cfg.variant,
            experts: cfg.experts,
            layers: stack.layers.len(),
            balance_turn_on: cfg.balance.turn_on_step(total),
            warnings,
            rows,
            eval,
        },
        stack,
    })
}

/// Entropy curve with de-uniformization onset and surviving experts.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropySummary {
    pub curve: Vec<(usize, f64)>,
    /// First logged step with `H̄ < threshold`.
    pub onset: Option<usize>,
    /// Experts whose final utilization exceeds `1 / (4E)`.
    pub alive: usize,
    pub final_entropy: f64,
}

pub fn entropy_summary(log: &TrainLog, threshold: f64) -> EntropySummary {
    let curve: Vec<(usize, f64)> = log.rows.iter().map(|r| (r.step, r.entropy_mean)).collect();
    let onset = curve.iter().find(|(_, h)| *h < threshold).map(|(s, _)| *s);
    let floor = 1.0 / (4.0 * log.experts as f64);
    let util = if log.eval.utilization.is_empty() {
        log.rows.last().map(|r| r.utilization.clone()).unwrap_or_default()
    } else {
        log.eval.utilization.clone()
    };
    EntropySummary {
        onset,
        alive: util.iter().filter(|&&u| u > floor).count(),
        final_entropy: log.rows.last().map_or(1.0, |r| r.entropy_mean),
        curve,
    }
}
