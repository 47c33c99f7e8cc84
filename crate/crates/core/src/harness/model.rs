//! A stack of adapted layers joined by `tanh`, and the full training
//! objective with its gradient.

use alloc::vec;
use alloc::vec::Vec;

use super::task::Batch;
use crate::adapter::{AdapterState, ForwardCache, Gradients, Upstream};
use crate::linalg::Matrix;
use crate::losses::{accumulate_orthogonality, routing_variance_loss, sigma_bucket, switch_balance, task_mse, BalanceConfig};
use crate::math;
use crate::seq::SeqBatch;
use crate::{Error, Result};

/// Weights of the objective's terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub balance: BalanceConfig,
    pub lo_weight: f64,
    pub lo_eps: f64,
    pub lv_weight: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub task: f64,
    pub balance: f64,
    pub orthogonality: f64,
    pub variance: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.task + self.balance + self.orthogonality + self.variance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub layers: Vec<AdapterState>,
}

pub struct StackPass {
    pub caches: Vec<ForwardCache>,
    pub output: SeqBatch,
}

impl Stack {
    pub fn forward(&self, x: &SeqBatch, sigma: &[f64]) -> Result<StackPass> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(&h, sigma)?;
            caches.push(cache);
            if l + 1 < self.layers.len() {
                h = y.map(math::tanh);
            } else {
                h = y;
            }
        }
        Ok(StackPass { caches, output: h })
    }

    /// Objective value only.
    pub fn loss(&self, batch: &Batch, obj: &Objective, step: usize, total_steps: usize) -> Result<LossParts> {
        let pass = self.forward(&batch.x, &batch.sigma)?;
        let (parts, _) = head_terms(&pass, batch, obj, step, total_steps)?;
        Ok(parts)
    }

    /// Objective value and gradients for every layer, last layer last.
    pub fn loss_and_grad(
        &self,
        batch: &Batch,
        obj: &Objective,
        step: usize,
        total_steps: usize,
    ) -> Result<(LossParts, Vec<Gradients>, StackPass)> {
        let pass = self.forward(&batch.x, &batch.sigma)?;
        let (parts, heads) = head_terms(&pass, batch, obj, step, total_steps)?;
        let (mut dy, per_layer) = heads;
        let mut grads: Vec<Option<Gradients>> = vec![None; self.layers.len()];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let cache = &pass.caches[l];
            let (dgates, dexpert) = &per_layer[l];
            let up = Upstream {
                dy: &dy,
                dgates: Some(dgates),
                dexpert: dexpert.as_deref(),
            };
            let g = layer.backward(cache, up, l > 0)?;
            if l > 0 {
                let dx = g.dx.as_ref().expect("requested");
                let prev = &pass.caches[l].x;
                // x_l = tanh(y_{l-1}) ⇒ dy_{l-1} = dx_l ⊙ (1 − x_l²)
                let mut next = dx.clone();
                for (d, h) in next.as_mut_slice().iter_mut().zip(prev.as_slice()) {
                    *d *= 1.0 - h * h;
                }
                dy = next;
            }
            grads[l] = Some(g);
        }
        Ok((parts, grads.into_iter().map(|g| g.expect("filled")).collect(), pass))
    }
}

type LayerUpstream = (Matrix, Option<Vec<SeqBatch>>);

/// Loss terms and their gradients w.r.t. the stack output, each layer's gates
/// and each layer's expert outputs.
fn head_terms(
    pass: &StackPass,
    batch: &Batch,
    obj: &Objective,
    step: usize,
    total_steps: usize,
) -> Result<(LossParts, (SeqBatch, Vec<LayerUpstream>))> {
    let (task, dy) = task_mse(&pass.output, &batch.target, None)?;
    let mut parts = LossParts {
        task,
        ..Default::default()
    };
    let buckets: Vec<usize> = batch
        .sigma
        .iter()
        .map(|&s| sigma_bucket(s, obj.balance.bucket_count.max(1)))
        .collect();
    let mut per_layer = Vec::with_capacity(pass.caches.len());
    for cache in &pass.caches {
        let gates = cache.gates();
        let (bal, mut dgates) = switch_balance(gates, step, total_steps, &obj.balance, &buckets)?;
        parts.balance += bal;
        if obj.lv_weight != 0.0 {
            let (lv, dlv) = routing_variance_loss(gates)?;
            parts.variance += obj.lv_weight * lv;
            dgates.add_assign_scaled(obj.lv_weight, &dlv);
        }
        let dexpert = if obj.lo_weight != 0.0 {
            let (lo, d) = orthogonality_over_tokens(cache, obj.lo_eps)?;
            parts.orthogonality += obj.lo_weight * lo;
            Some(d.into_iter().map(|s| s.map(|v| v * obj.lo_weight)).collect())
        } else {
            None
        };
        per_layer.push((dgates, dexpert));
    }
    Ok((parts, (dy, per_layer)))
}

/// Output-orthogonality loss with every token as a sample.
fn orthogonality_over_tokens(cache: &ForwardCache, eps: f64) -> Result<(f64, Vec<SeqBatch>)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig("lo_eps must be positive".into()));
    }
    let outs = &cache.expert_outputs;
    let experts = outs.len();
    let (batch, len, dim) = cache.y.shape();
    let mut grads = vec![SeqBatch::zeros(batch, len, dim); experts];
    let mut loss = 0.0;
    let mut x = Matrix::zeros(experts, dim);
    let mut g = Matrix::zeros(experts, dim);
    for b in 0..batch {
        let gates = cache.gates().row(b);
        for t in 0..len {
            for e in 0..experts {
                x.row_mut(e).copy_from_slice(outs[e].token(b, t));
            }
            g.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
            accumulate_orthogonality(&x, gates, eps, &mut loss, &mut g);
            for e in 0..experts {
                grads[e].token_mut(b, t).copy_from_slice(g.row(e));
            }
        }
    }
    Ok((loss, grads))
}
