//! One adapted linear layer in three variants.
//!
//! * **Ortho**: the shared down-projection is a Cayley rotation of the top-`r`
//!   right singular vectors of `W0`, and expert `e` writes through its own
//!   disjoint slice of the top-`E·r` left singular vectors, rotated only
//!   within the slice. A shared per-rank scale `λ` (zero at init) gates the
//!   residual.
//! * **Naive**: shared trainable `A`, zero-initialized expert heads `B_e`.
//! * **Jittered**: as naive, with Gaussian noise on the `B_e`.
//!
//! All three mix experts with one dense softmax gate per sample.

mod backward;
mod forward;

pub use backward::{Gradients, ParamGrads, Upstream};
pub use forward::ForwardCache;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cayley::{cayley_forward, CayleySeed};
use crate::linalg::{gram, randomized_svd, Matrix, DEFAULT_POWER_ITERS};
use crate::math;
use crate::router::{RouterConfig, RouterInput, RouterState};
use crate::{Error, Result};

/// Extra columns requested from the randomized SVD beyond `E·r`.
pub const SVD_OVERSAMPLE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum Variant {
    Ortho,
    Naive,
    Jittered { sigma: f64 },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Ortho => "ortho",
            Variant::Naive => "naive",
            Variant::Jittered { .. } => "jittered",
        }
    }
}

/// Non-fatal conditions detected while building an adapter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum InitWarning {
    /// `min(d_out, d_in) < E·r`: experts share one replicated basis and only
    /// an expert warm-up schedule can break their symmetry.
    SharedBasisFallback { min_dim: usize, required: usize },
}

impl core::fmt::Display for InitWarning {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            InitWarning::SharedBasisFallback { min_dim, required } => write!(
                f,
                "min(d_out, d_in) = {min_dim} < E*r = {required}: falling back to a shared \
                 basis replicated across experts; training without expert warm-up is unsafe"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthoParams {
    /// `r × d_in`, orthonormal rows, frozen.
    pub q_basis: Matrix,
    /// `E` frozen `d_out × r` blocks with orthonormal columns.
    pub p_bases: Vec<Matrix>,
    pub s_q: CayleySeed,
    pub s_p: Vec<CayleySeed>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    /// `r × d_in`.
    pub a_shared: Matrix,
    /// `E` blocks of `d_out × r`.
    pub b_experts: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdapterParams {
    Ortho(OrthoParams),
    Baseline(BaselineParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterState {
    /// Frozen `d_out × d_in` base weight.
    pub w0: Matrix,
    pub variant: Variant,
    pub experts: usize,
    pub rank: usize,
    pub alpha: f64,
    pub params: AdapterParams,
    pub router: RouterState,
    pub fallback_shared_basis: bool,
    pub warnings: Vec<InitWarning>,
}

/// Identifies one trainable tensor; the optimizer keys its moments on the
/// order these are visited in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamId {
    SeedQ,
    SeedP(usize),
    Lambda,
    AShared,
    BExpert(usize),
    RouterWeights,
    RouterBias,
}

impl ParamId {
    pub fn is_router(&self) -> bool {
        matches!(self, ParamId::RouterWeights | ParamId::RouterBias)
    }

    pub fn expert(&self) -> Option<usize> {
        match self {
            ParamId::SeedP(e) | ParamId::BExpert(e) => Some(*e),
            _ => None,
        }
    }

    /// Biases are excluded from decoupled weight decay.
    pub fn decays(&self) -> bool {
        !matches!(self, ParamId::RouterBias)
    }
}

fn check_sizes(w0: &Matrix, experts: usize, rank: usize, alpha: f64) -> Result<()> {
    if experts < 1 || rank < 1 {
        return Err(Error::InvalidConfig(format!(
            "need at least one expert and rank >= 1 (got E={experts}, r={rank})"
        )));
    }
    if !alpha.is_finite() {
        return Err(Error::InvalidConfig("alpha must be finite".into()));
    }
    if !w0.is_finite() {
        return Err(Error::NonFinite("w0"));
    }
    Ok(())
}

fn router_width(cfg: &RouterConfig, d_in: usize, rank: usize) -> usize {
    match cfg.input {
        RouterInput::Raw => d_in,
        RouterInput::Bottleneck => rank,
    }
}

impl AdapterState {
    /// Builds the disjoint-slice adapter from a randomized SVD of `w0` at
    /// width `min(E·r + 6, d_out, d_in)`. When `min(d_out, d_in) < E·r` the top-`r` slice is
    /// replicated across experts and a warning is recorded.
    pub fn init_ortho(
        w0: Matrix,
        experts: usize,
        rank: usize,
        alpha: f64,
        rng_seed: u64,
        router_cfg: RouterConfig,
    ) -> Result<Self> {
        check_sizes(&w0, experts, rank, alpha)?;
        let (d_out, d_in) = w0.shape();
        let min_dim = d_out.min(d_in);
        let required = experts * rank;
        let fallback = min_dim < required;
        if rank > min_dim {
            return Err(Error::InvalidConfig(format!(
                "rank {rank} exceeds min(d_out, d_in) = {min_dim}"
            )));
        }
        // Oversampling only sharpens the sketch; it is capped at the full width.
        let width = (required + SVD_OVERSAMPLE).min(min_dim);
        let svd = randomized_svd(&w0, width, DEFAULT_POWER_ITERS, rng_seed)?;
        let q_basis = svd.v.columns(0..rank).transpose();
        let p_bases = (0..experts)
            .map(|e| {
                let start = if fallback { 0 } else { e * rank };
                svd.u.columns(start..start + rank)
            })
            .collect();
        let mut warnings = Vec::new();
        if fallback {
            warnings.push(InitWarning::SharedBasisFallback { min_dim, required });
        }
        let router = RouterState::zeroed(router_cfg.clone(), experts, router_width(&router_cfg, d_in, rank))?;
        Ok(Self {
            w0,
            variant: Variant::Ortho,
            experts,
            rank,
            alpha,
            params: AdapterParams::Ortho(OrthoParams {
                q_basis,
                p_bases,
                s_q: CayleySeed::zeros(rank),
                s_p: vec![CayleySeed::zeros(rank); experts],
                lambda: vec![0.0; rank],
            }),
            router,
            fallback_shared_basis: fallback,
            warnings,
        })
    }

    /// Shared-basis baseline: `A ~ U(±1/√d_in)`, `B_e = 0` (naive) or
    /// `B_e ~ N(0, σ²)` (jittered).
    pub fn init_baseline(
        w0: Matrix,
        variant: Variant,
        experts: usize,
        rank: usize,
        alpha: f64,
        rng_seed: u64,
        router_cfg: RouterConfig,
    ) -> Result<Self> {
        check_sizes(&w0, experts, rank, alpha)?;
        let sigma = match variant {
            Variant::Naive => 0.0,
            Variant::Jittered { sigma } if sigma.is_finite() && sigma >= 0.0 => sigma,
            Variant::Jittered { sigma } => {
                return Err(Error::InvalidConfig(format!("jitter sigma {sigma} must be >= 0")))
            }
            Variant::Ortho => return Err(Error::WrongVariant("init_baseline")),
        };
        let (d_out, d_in) = w0.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let bound = 1.0 / math::sqrt(d_in as f64);
        let a_shared = Matrix::from_fn(rank, d_in, |_, _| rng.random_range(-bound..bound));
        let b_experts = (0..experts)
            .map(|_| {
                if sigma > 0.0 {
                    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
                    Matrix::from_fn(d_out, rank, |_, _| normal.sample(&mut rng))
                } else {
                    Matrix::zeros(d_out, rank)
                }
            })
            .collect();
        let router = RouterState::zeroed(router_cfg.clone(), experts, router_width(&router_cfg, d_in, rank))?;
        Ok(Self {
            w0,
            variant,
            experts,
            rank,
            alpha,
            params: AdapterParams::Baseline(BaselineParams { a_shared, b_experts }),
            router,
            fallback_shared_basis: false,
            warnings: Vec::new(),
        })
    }

    pub fn d_in(&self) -> usize {
        self.w0.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w0.rows()
    }

    /// Residual scale `s = α / r`.
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// `Q_eff = R_q Q_basis` and `P_eff[e] = P_bases[e] R_p[e]`.
    pub fn effective_bases(&self) -> Result<(Matrix, Vec<Matrix>)> {
        match &self.params {
            AdapterParams::Ortho(p) => {
                let q_eff = cayley_forward(&p.s_q).mul(&p.q_basis);
                let p_eff = p
                    .p_bases
                    .iter()
                    .zip(&p.s_p)
                    .map(|(base, seed)| base.mul(&cayley_forward(seed)))
                    .collect();
                Ok((q_eff, p_eff))
            }
            AdapterParams::Baseline(_) => Err(Error::WrongVariant("effective_bases")),
        }
    }

    /// The per-expert up-projections as they act on the bottleneck:
    /// `P_eff[e]` for ortho, `B_e` for the baselines.
    pub fn expert_heads(&self) -> Vec<Matrix> {
        match &self.params {
            AdapterParams::Ortho(_) => self.effective_bases().expect("ortho").1,
            AdapterParams::Baseline(p) => p.b_experts.clone(),
        }
    }

    /// `E × E` matrix of `‖H_iᵀ H_j‖_F` over the expert heads. Disjoint
    /// slices give a zero off-diagonal; a shared basis cannot.
    pub fn deadlock_diagnostic(&self) -> Matrix {
        let heads = self.expert_heads();
        Matrix::from_fn(self.experts, self.experts, |i, j| {
            gram(&heads[i], &heads[j]).expect("heads share d_out").frobenius_norm()
        })
    }

    /// Largest off-diagonal entry of [`deadlock_diagnostic`](Self::deadlock_diagnostic).
    pub fn max_cross_gram(&self) -> f64 {
        let d = self.deadlock_diagnostic();
        let mut m: f64 = 0.0;
        for i in 0..self.experts {
            for j in 0..self.experts {
                if i != j {
                    m = m.max(d[(i, j)]);
                }
            }
        }
        m
    }

    /// `max_{e,e'} ‖H_e − H_e'‖_F` over the expert heads.
    pub fn expert_divergence(&self) -> f64 {
        let heads = self.expert_heads();
        let mut m: f64 = 0.0;
        for i in 0..heads.len() {
            for j in (i + 1)..heads.len() {
                m = m.max(heads[i].sub(&heads[j]).expect("same shape").frobenius_norm());
            }
        }
        m
    }

    /// Trainable tensors in a fixed order, paired with their ids.
    pub fn params_mut(&mut self) -> Vec<(ParamId, &mut [f64])> {
        let mut out: Vec<(ParamId, &mut [f64])> = Vec::new();
        match &mut self.params {
            AdapterParams::Ortho(p) => {
                out.push((ParamId::SeedQ, p.s_q.as_mut_slice()));
                for (e, s) in p.s_p.iter_mut().enumerate() {
                    out.push((ParamId::SeedP(e), s.as_mut_slice()));
                }
                out.push((ParamId::Lambda, p.lambda.as_mut_slice()));
            }
            AdapterParams::Baseline(p) => {
                out.push((ParamId::AShared, p.a_shared.as_mut_slice()));
                for (e, b) in p.b_experts.iter_mut().enumerate() {
                    out.push((ParamId::BExpert(e), b.as_mut_slice()));
                }
            }
        }
        out.push((ParamId::RouterWeights, self.router.weights.as_mut_slice()));
        out.push((ParamId::RouterBias, self.router.bias.as_mut_slice()));
        out
    }

    /// Row-major named tensors covering the full state, for serialization.
    pub fn named_tensors(&self) -> Vec<(alloc::string::String, Vec<usize>, &[f64])> {
        fn m(name: alloc::string::String, t: &Matrix) -> (alloc::string::String, Vec<usize>, &[f64]) {
            (name, vec![t.rows(), t.cols()], t.as_slice())
        }
        let mut out = Vec::new();
        out.push(m("w0".into(), &self.w0));
        match &self.params {
            AdapterParams::Ortho(p) => {
                out.push(m("q_basis".into(), &p.q_basis));
                for (e, b) in p.p_bases.iter().enumerate() {
                    out.push(m(format!("p_bases.{e}"), b));
                }
                out.push(m("s_q".into(), p.s_q.matrix()));
                for (e, s) in p.s_p.iter().enumerate() {
                    out.push(m(format!("s_p.{e}"), s.matrix()));
                }
                out.push(("lambda".into(), vec![p.lambda.len()], p.lambda.as_slice()));
            }
            AdapterParams::Baseline(p) => {
                out.push(m("a_shared".into(), &p.a_shared));
                for (e, b) in p.b_experts.iter().enumerate() {
                    out.push(m(format!("b_experts.{e}"), b));
                }
            }
        }
        out.push(m("router.weights".into(), &self.router.weights));
        out.push(("router.bias".into(), vec![self.router.bias.len()], self.router.bias.as_slice()));
        out
    }
}
