use alloc::vec;
use alloc::vec::Vec;

use super::{AdapterParams, AdapterState, ForwardCache, ParamId};
use crate::cayley::cayley_vjp;
use crate::linalg::Matrix;
use crate::math;
use crate::router::{pool_backward, RouterGrad, RouterInput};
use crate::seq::SeqBatch;
use crate::{Error, Result};

/// Gradients flowing into one adapter from downstream.
#[derive(Debug, Clone, Copy)]
pub struct Upstream<'a> {
    /// `∂loss/∂y`.
    pub dy: &'a SeqBatch,
    /// Direct gradient w.r.t. the gate probabilities (balance loss, routing
    /// variance), `batch × E`.
    pub dgates: Option<&'a Matrix>,
    /// Direct gradient w.r.t. each expert's pre-mix output.
    pub dexpert: Option<&'a [SeqBatch]>,
}

impl<'a> Upstream<'a> {
    pub fn output(dy: &'a SeqBatch) -> Self {
        Self {
            dy,
            dgates: None,
            dexpert: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrads {
    Ortho {
        s_q: Matrix,
        s_p: Vec<Matrix>,
        lambda: Vec<f64>,
    },
    Baseline {
        a_shared: Matrix,
        b_experts: Vec<Matrix>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: ParamGrads,
    pub router: RouterGrad,
    /// Total gradient w.r.t. the gate probabilities.
    pub dgates: Matrix,
    /// `∂loss/∂x`, when requested.
    pub dx: Option<SeqBatch>,
}

impl Gradients {
    /// Same order as [`AdapterState::params_mut`].
    pub fn slices(&self) -> Vec<(ParamId, &[f64])> {
        let mut out: Vec<(ParamId, &[f64])> = Vec::new();
        match &self.params {
            ParamGrads::Ortho { s_q, s_p, lambda } => {
                out.push((ParamId::SeedQ, s_q.as_slice()));
                for (e, g) in s_p.iter().enumerate() {
                    out.push((ParamId::SeedP(e), g.as_slice()));
                }
                out.push((ParamId::Lambda, lambda.as_slice()));
            }
            ParamGrads::Baseline { a_shared, b_experts } => {
                out.push((ParamId::AShared, a_shared.as_slice()));
                for (e, g) in b_experts.iter().enumerate() {
                    out.push((ParamId::BExpert(e), g.as_slice()));
                }
            }
        }
        out.push((ParamId::RouterWeights, self.router.weights.as_slice()));
        out.push((ParamId::RouterBias, self.router.bias.as_slice()));
        out
    }

    /// Zeroes every per-expert gradient except expert `keep`'s.
    pub fn retain_expert(&mut self, keep: usize) {
        let blocks = match &mut self.params {
            ParamGrads::Ortho { s_p, .. } => s_p,
            ParamGrads::Baseline { b_experts, .. } => b_experts,
        };
        for (e, g) in blocks.iter_mut().enumerate() {
            if e != keep {
                g.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn zero_router(&mut self) {
        self.router.weights.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        self.router.bias.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn squared_norm(&self) -> f64 {
        self.slices()
            .iter()
            .map(|(_, g)| math::dot(g, g))
            .sum()
    }
}

impl AdapterState {
    /// Exact reverse pass through the forward of [`AdapterState::forward`],
    /// including the gate's dependence on the pooled bottleneck and both
    /// Cayley legs.
    pub fn backward(&self, cache: &ForwardCache, up: Upstream<'_>, need_dx: bool) -> Result<Gradients> {
        let (batch, len, d_in) = cache.x.shape();
        let r = self.rank;
        let e_count = self.experts;
        let s = self.scale();
        if d_in != self.d_in()
            || cache.bottleneck.dim() != r
            || cache.heads.len() != e_count
            || cache.route.gates.cols() != e_count
            || cache.down.shape() != (r, d_in)
            || cache.pooled.cols() != self.router.pooled_width
        {
            return Err(Error::CacheMismatch);
        }
        if up.dy.shape() != (batch, len, self.d_out()) {
            return Err(Error::ShapeMismatch("dy does not match the forward output".into()));
        }
        if let Some(dg) = up.dgates {
            if dg.shape() != (batch, e_count) {
                return Err(Error::ShapeMismatch("dgates must be batch x E".into()));
            }
        }
        if let Some(dx) = up.dexpert {
            if dx.len() != e_count || dx.iter().any(|d| d.shape() != up.dy.shape()) {
                return Err(Error::ShapeMismatch("one d_out-wide gradient per expert".into()));
            }
        }

        let gates = &cache.route.gates;
        let mut dgates = match up.dgates {
            Some(dg) => dg.clone(),
            None => Matrix::zeros(batch, e_count),
        };
        // ∂/∂(scaled bottleneck) and per-expert head gradients, in the
        // coordinates each variant trains.
        let mut dscaled = SeqBatch::zeros(batch, len, r);
        let mut dheads: Vec<Matrix> = vec![Matrix::zeros(self.d_out(), r); e_count];
        let mut dout = vec![0.0; self.d_out()];
        for b in 0..batch {
            for t in 0..len {
                let dy = up.dy.token(b, t);
                let m = cache.scaled.token(b, t);
                for e in 0..e_count {
                    let g = gates[(b, e)];
                    dgates[(b, e)] += math::dot(dy, cache.expert_outputs[e].token(b, t));
                    dout.iter_mut().zip(dy).for_each(|(o, d)| *o = g * d);
                    if let Some(dx) = up.dexpert {
                        math::axpy(1.0, dx[e].token(b, t), &mut dout);
                    }
                    // x̃_e = s H_e m
                    dheads[e].add_outer(s, &dout, m);
                    let dm = dscaled.token_mut(b, t);
                    for (j, dmj) in dm.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (i, o) in dout.iter().enumerate() {
                            acc += cache.heads[e][(i, j)] * o;
                        }
                        *dmj += s * acc;
                    }
                }
            }
        }

        // Undo the λ scale.
        let mut dbottleneck = dscaled.clone();
        let mut dlambda = vec![0.0; r];
        if let AdapterParams::Ortho(p) = &self.params {
            for b in 0..batch {
                for t in 0..len {
                    let l = cache.bottleneck.token(b, t);
                    let dm = dscaled.token(b, t);
                    for j in 0..r {
                        dlambda[j] += dm[j] * l[j];
                    }
                    for (v, lj) in dbottleneck.token_mut(b, t).iter_mut().zip(&p.lambda) {
                        *v *= lj;
                    }
                }
            }
        }

        // Gate path back into the router and its pooled input.
        let (router_grad, dpooled) = self.router.route_backward(&cache.route, &dgates);
        let mut dx = if need_dx {
            Some(SeqBatch::zeros(batch, len, d_in))
        } else {
            None
        };
        let pool_kind = self.router.config.pool;
        match self.router.config.input {
            RouterInput::Bottleneck => {
                pool_backward(&cache.bottleneck, &cache.pooled, pool_kind, &dpooled, &mut dbottleneck)
            }
            RouterInput::Raw => {
                if let Some(dx) = dx.as_mut() {
                    pool_backward(&cache.x, &cache.pooled, pool_kind, &dpooled, dx);
                }
            }
        }

        // ℓ = D x: gradient for D and (optionally) x.
        let mut ddown = Matrix::zeros(r, d_in);
        for b in 0..batch {
            for t in 0..len {
                let dl = dbottleneck.token(b, t);
                ddown.add_outer(1.0, dl, cache.x.token(b, t));
                if let Some(dx) = dx.as_mut() {
                    let dxt = dx.token_mut(b, t);
                    cache.down.t_mul_vec_acc(dl, dxt);
                    self.w0.t_mul_vec_acc(up.dy.token(b, t), dxt);
                }
            }
        }

        let params = match &self.params {
            AdapterParams::Ortho(p) => {
                // Q_eff = R_q Q_basis ⇒ ∂R_q = ∂Q_eff Q_basisᵀ.
                let d_rq = ddown.mul_t(&p.q_basis);
                let s_q = cayley_vjp(&p.s_q, &d_rq)?;
                // P_eff[e] = P_bases[e] R_p[e] ⇒ ∂R_p = P_bases[e]ᵀ ∂P_eff.
                let s_p = p
                    .p_bases
                    .iter()
                    .zip(&p.s_p)
                    .zip(&dheads)
                    .map(|((base, seed), dh)| cayley_vjp(seed, &base.t_mul(dh)))
                    .collect::<Result<Vec<_>>>()?;
                ParamGrads::Ortho {
                    s_q,
                    s_p,
                    lambda: dlambda,
                }
            }
            AdapterParams::Baseline(_) => ParamGrads::Baseline {
                a_shared: ddown,
                b_experts: dheads,
            },
        };
        Ok(Gradients {
            params,
            router: router_grad,
            dgates,
            dx,
        })
    }
}
