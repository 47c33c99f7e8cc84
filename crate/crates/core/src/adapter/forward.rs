use alloc::vec::Vec;

use super::{AdapterParams, AdapterState};
use crate::linalg::Matrix;
use crate::router::{pool, RouteCache, RouterInput};
use crate::seq::SeqBatch;
use crate::{Error, Result};

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub x: SeqBatch,
    pub sigma: Vec<f64>,
    /// Bottleneck `ℓ` before the λ scale (baselines: `A x`).
    pub bottleneck: SeqBatch,
    /// Bottleneck after the λ scale (baselines: identical to `bottleneck`).
    pub scaled: SeqBatch,
    /// Router's pooled input, before σ features are appended.
    pub pooled: Matrix,
    pub route: RouteCache,
    /// `Q_eff` (ortho) or `A` (baselines) as used in this pass.
    pub down: Matrix,
    /// Per-expert heads used in this pass.
    pub heads: Vec<Matrix>,
    /// Per-expert pre-mix outputs `x̃_e = s · H_e · scaled`, one batch each.
    pub expert_outputs: Vec<SeqBatch>,
    pub y: SeqBatch,
}

impl ForwardCache {
    pub fn gates(&self) -> &Matrix {
        &self.route.gates
    }
}

impl AdapterState {
    /// `y = W0 x + s Σ_e g_e H_e (λ ⊙ ℓ)` with `ℓ = x Dᵀ` and the gate
    /// computed from the pre-λ bottleneck (or the raw input, if configured).
    pub fn forward(&self, x: &SeqBatch, sigma: &[f64]) -> Result<(SeqBatch, ForwardCache)> {
        let (batch, len, d_in) = x.shape();
        if d_in != self.d_in() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "input width {d_in}, adapter expects {}",
                self.d_in()
            )));
        }
        if sigma.len() != batch {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} noise levels for a batch of {batch}",
                sigma.len()
            )));
        }
        if !x.is_finite() || sigma.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("adapter input"));
        }
        if sigma.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::ShapeMismatch("noise levels must lie in [0, 1]".into()));
        }

        let r = self.rank;
        let d_out = self.d_out();
        let s = self.scale();
        let (down, heads, lambda): (Matrix, Vec<Matrix>, Option<&[f64]>) = match &self.params {
            AdapterParams::Ortho(p) => {
                let (q_eff, p_eff) = self.effective_bases()?;
                (q_eff, p_eff, Some(p.lambda.as_slice()))
            }
            AdapterParams::Baseline(p) => (p.a_shared.clone(), p.b_experts.clone(), None),
        };

        let mut bottleneck = SeqBatch::zeros(batch, len, r);
        for b in 0..batch {
            for t in 0..len {
                down.mul_vec_into(x.token(b, t), bottleneck.token_mut(b, t));
            }
        }

        let pooled = match self.router.config.input {
            RouterInput::Bottleneck => pool(&bottleneck, self.router.config.pool)?,
            RouterInput::Raw => pool(x, self.router.config.pool)?,
        };
        let route = self.router.route(&pooled, sigma)?;

        let scaled = match lambda {
            Some(l) => {
                let mut m = bottleneck.clone();
                for b in 0..batch {
                    for t in 0..len {
                        for (v, lj) in m.token_mut(b, t).iter_mut().zip(l) {
                            *v *= lj;
                        }
                    }
                }
                m
            }
            None => bottleneck.clone(),
        };

        let mut expert_outputs = Vec::with_capacity(self.experts);
        for head in &heads {
            let mut out = SeqBatch::zeros(batch, len, d_out);
            for b in 0..batch {
                for t in 0..len {
                    let o = out.token_mut(b, t);
                    head.mul_vec_into(scaled.token(b, t), o);
                    o.iter_mut().for_each(|v| *v *= s);
                }
            }
            expert_outputs.push(out);
        }

        let mut y = SeqBatch::zeros(batch, len, d_out);
        for b in 0..batch {
            for t in 0..len {
                let yt = y.token_mut(b, t);
                self.w0.mul_vec_into(x.token(b, t), yt);
                for (e, out) in expert_outputs.iter().enumerate() {
                    let g = route.gates[(b, e)];
                    if g != 0.0 {
                        crate::math::axpy(g, out.token(b, t), yt);
                    }
                }
            }
        }

        let cache = ForwardCache {
            x: x.clone(),
            sigma: sigma.to_vec(),
            bottleneck,
            scaled,
            pooled,
            route,
            down,
            heads,
            expert_outputs,
            y: y.clone(),
        };
        Ok((y, cache))
    }

    /// `W0 x` for every token: the frozen path alone.
    pub fn base_forward(&self, x: &SeqBatch) -> SeqBatch {
        let (batch, len, _) = x.shape();
        let mut y = SeqBatch::zeros(batch, len, self.d_out());
        for b in 0..batch {
            for t in 0..len {
                self.w0.mul_vec_into(x.token(b, t), y.token_mut(b, t));
            }
        }
        y
    }
}
