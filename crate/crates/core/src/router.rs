//! Layer-local gate: sequence pooling, sinusoidal noise-level features,
//! affine logits with optional hard σ-band masking, softmax, and the
//! normalized-entropy metric.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::seq::SeqBatch;
use crate::{Error, Result};

/// Logit assigned to out-of-band experts. `exp` of this underflows to
/// exactly zero, so masked probabilities are exactly 0 without NaNs.
pub const MASKED_LOGIT: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PoolKind {
    Rms,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum BandLayout {
    /// Expert `e` serves band `e mod B`.
    Interleaved,
    /// Experts are split into `B` consecutive blocks.
    Contiguous,
}

/// What the router pools: the raw layer input or the rank-`r` bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum RouterInput {
    Raw,
    Bottleneck,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RouterConfig {
    pub pool: PoolKind,
    pub input: RouterInput,
    /// Width of the sinusoidal σ encoding; 0 disables it.
    pub sigma_dim: usize,
    /// Number of σ bands for hard masking; 0 disables masking.
    pub band_count: usize,
    /// `band_count + 1` ascending edges from 0 to 1. Empty means uniform.
    pub band_edges: Vec<f64>,
    pub band_layout: BandLayout,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            pool: PoolKind::Rms,
            input: RouterInput::Bottleneck,
            sigma_dim: 0,
            band_count: 0,
            band_edges: Vec::new(),
            band_layout: BandLayout::Interleaved,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_dim % 2 != 0 {
            return Err(Error::InvalidDim(self.sigma_dim));
        }
        if self.band_count == 0 {
            if !self.band_edges.is_empty() {
                return Err(Error::InvalidConfig("band_edges given without band_count".into()));
            }
            return Ok(());
        }
        let edges = self.edges();
        if edges.len() != self.band_count + 1 {
            return Err(Error::InvalidConfig(alloc::format!(
                "expected {} band edges, got {}",
                self.band_count + 1,
                edges.len()
            )));
        }
        if edges[0] != 0.0 || edges[self.band_count] != 1.0 {
            return Err(Error::InvalidConfig("band edges must start at 0 and end at 1".into()));
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("band edges must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Resolved band edges (`linspace(0, 1, B + 1)` when none are given).
    pub fn edges(&self) -> Vec<f64> {
        if !self.band_edges.is_empty() || self.band_count == 0 {
            return self.band_edges.clone();
        }
        let b = self.band_count;
        (0..=b).map(|i| i as f64 / b as f64).collect()
    }

    /// Band containing `sigma`, or `None` when masking is off.
    pub fn band_of(&self, sigma: f64) -> Option<usize> {
        if self.band_count == 0 {
            return None;
        }
        let edges = self.edges();
        let mut band = 0;
        for (i, e) in edges.iter().enumerate().take(self.band_count) {
            if sigma >= *e {
                band = i;
            }
        }
        Some(band)
    }

    /// Band served by expert `e` out of `experts`.
    pub fn expert_band(&self, e: usize, experts: usize) -> Option<usize> {
        if self.band_count == 0 {
            return None;
        }
        Some(match self.band_layout {
            BandLayout::Interleaved => e % self.band_count,
            BandLayout::Contiguous => e * self.band_count / experts,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RouterState {
    pub config: RouterConfig,
    pub experts: usize,
    /// Width of the pooled input (excluding σ features).
    pub pooled_width: usize,
    /// `(pooled_width + sigma_dim) × experts`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Everything `route` computed that the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteCache {
    /// Router input rows, `pooled ‖ φ(σ)`.
    pub inputs: Matrix,
    pub logits: Matrix,
    pub gates: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl RouterGrad {
    pub fn zeros(st: &RouterState) -> Self {
        Self {
            weights: Matrix::zeros(st.weights.rows(), st.weights.cols()),
            bias: vec![0.0; st.bias.len()],
        }
    }
}

impl RouterState {
    /// Zero weights and bias: the step-0 gate is the (banded) uniform prior.
    pub fn zeroed(config: RouterConfig, experts: usize, pooled_width: usize) -> Result<Self> {
        config.validate()?;
        if experts == 0 {
            return Err(Error::InvalidConfig("router needs at least one expert".into()));
        }
        let rows = pooled_width + config.sigma_dim;
        Ok(Self {
            config,
            experts,
            pooled_width,
            weights: Matrix::zeros(rows, experts),
            bias: vec![0.0; experts],
        })
    }

    pub fn route(&self, pooled: &Matrix, sigma: &[f64]) -> Result<RouteCache> {
        let batch = pooled.rows();
        if pooled.cols() != self.pooled_width || sigma.len() != batch {
            return Err(Error::ShapeMismatch(alloc::format!(
                "router expects {}-wide pooled rows and one sigma per sample",
                self.pooled_width
            )));
        }
        let width = self.weights.rows();
        let mut inputs = Matrix::zeros(batch, width);
        for b in 0..batch {
            let row = inputs.row_mut(b);
            row[..self.pooled_width].copy_from_slice(pooled.row(b));
            if self.config.sigma_dim > 0 {
                let feats = sigma_features(sigma[b], self.config.sigma_dim)?;
                row[self.pooled_width..].copy_from_slice(&feats);
            }
        }
        let mut logits = inputs.mul(&self.weights);
        for b in 0..batch {
            let row = logits.row_mut(b);
            math::axpy(1.0, &self.bias, row);
            if let Some(band) = self.config.band_of(sigma[b]) {
                let mut any = false;
                for (e, l) in row.iter_mut().enumerate() {
                    if self.config.expert_band(e, self.experts) == Some(band) {
                        any = true;
                    } else {
                        *l = MASKED_LOGIT;
                    }
                }
                if !any {
                    return Err(Error::AllMasked { band });
                }
            }
        }
        let mut gates = logits.clone();
        for b in 0..batch {
            softmax_in_place(gates.row_mut(b));
        }
        Ok(RouteCache {
            inputs,
            logits,
            gates,
        })
    }

    /// Backpropagates `dgates` (gradient w.r.t. gate probabilities) into the
    /// router parameters and the pooled input.
    pub fn route_backward(&self, cache: &RouteCache, dgates: &Matrix) -> (RouterGrad, Matrix) {
        let dlogits = softmax_backward(&cache.gates, dgates);
        let mut grad = RouterGrad::zeros(self);
        grad.weights = cache.inputs.t_mul(&dlogits);
        for b in 0..dlogits.rows() {
            math::axpy(1.0, dlogits.row(b), &mut grad.bias);
        }
        let dinputs = dlogits.mul_t(&self.weights);
        let dpooled = dinputs.columns(0..self.pooled_width);
        (grad, dpooled)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax Jacobian-vector product: `g ⊙ (d − ⟨g, d⟩)`.
pub fn softmax_backward(gates: &Matrix, dgates: &Matrix) -> Matrix {
    Matrix::from_fn(gates.rows(), gates.cols(), |b, e| {
        let inner = math::dot(gates.row(b), dgates.row(b));
        gates[(b, e)] * (dgates[(b, e)] - inner)
    })
}

/// Per-channel pooling over the sequence axis: `batch × len × d → batch × d`.
pub fn pool(seq: &SeqBatch, kind: PoolKind) -> Result<Matrix> {
    let (batch, len, dim) = seq.shape();
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    let mut out = Matrix::zeros(batch, dim);
    for b in 0..batch {
        let row = out.row_mut(b);
        match kind {
            PoolKind::Rms | PoolKind::Mean => {
                for t in 0..len {
                    for (o, v) in row.iter_mut().zip(seq.token(b, t)) {
                        *o += if kind == PoolKind::Rms { v * v } else { *v };
                    }
                }
                for o in row.iter_mut() {
                    *o /= len as f64;
                    if kind == PoolKind::Rms {
                        *o = math::sqrt(*o);
                    }
                }
            }
            PoolKind::Max => {
                row.copy_from_slice(seq.token(b, 0));
                for t in 1..len {
                    for (o, v) in row.iter_mut().zip(seq.token(b, t)) {
                        if *v > *o {
                            *o = *v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Accumulates the gradient of a pooled output back into `dseq`.
///
/// RMS uses `∂p/∂ℓ = ℓ / (L p)`, with a zero subgradient where `p = 0`. Max
/// routes the gradient to the first maximizing token.
pub fn pool_backward(
    seq: &SeqBatch,
    pooled: &Matrix,
    kind: PoolKind,
    dpooled: &Matrix,
    dseq: &mut SeqBatch,
) {
    let (batch, len, dim) = seq.shape();
    let inv_len = 1.0 / len as f64;
    for b in 0..batch {
        let dp = dpooled.row(b);
        let p = pooled.row(b);
        match kind {
            PoolKind::Rms => {
                for t in 0..len {
                    let x = seq.token(b, t);
                    let dx = dseq.token_mut(b, t);
                    for j in 0..dim {
                        if p[j] > 0.0 {
                            dx[j] += dp[j] * x[j] * inv_len / p[j];
                        }
                    }
                }
            }
            PoolKind::Mean => {
                for t in 0..len {
                    math::axpy(inv_len, dp, dseq.token_mut(b, t));
                }
            }
            PoolKind::Max => {
                for j in 0..dim {
                    if let Some(t) = (0..len).find(|t| seq.token(b, *t)[j] == p[j]) {
                        dseq.token_mut(b, t)[j] += dp[j];
                    }
                }
            }
        }
    }
}

/// Sinusoidal noise-level encoding: pairs `(sin 2πf_kσ, cos 2πf_kσ)` with
/// `f_k = 2^k` for `k = 0 .. dim/2`.
pub fn sigma_features(sigma: f64, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::InvalidDim(dim));
    }
    let mut out = Vec::with_capacity(dim);
    let mut freq = 1.0;
    for _ in 0..dim / 2 {
        let phase = 2.0 * core::f64::consts::PI * freq * sigma;
        out.push(math::sin(phase));
        out.push(math::cos(phase));
        freq *= 2.0;
    }
    Ok(out)
}

/// Batch mean of `H(g_b) / ln E`, with `0 · ln 0 = 0`. A single expert has no
/// routing uncertainty and reports 0.
pub fn normalized_entropy(gates: &Matrix) -> Result<f64> {
    let (batch, experts) = gates.shape();
    check_simplex(gates)?;
    if experts < 2 || batch == 0 {
        return Ok(0.0);
    }
    let norm = math::ln(experts as f64);
    let mut total = 0.0;
    for b in 0..batch {
        let h: f64 = gates
            .row(b)
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| -p * math::ln(*p))
            .sum();
        total += h / norm;
    }
    Ok(total / batch as f64)
}

pub(crate) fn check_simplex(gates: &Matrix) -> Result<()> {
    for b in 0..gates.rows() {
        let row = gates.row(b);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-8 || row.iter().any(|p| *p < -1e-8 || !p.is_finite()) {
            return Err(Error::NotOnSimplex { row: b, sum });
        }
    }
    Ok(())
}
