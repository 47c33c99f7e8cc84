//! Synthetic multi-style regression task.
//!
//! Each style `k` owns a teacher delta confined to one disjoint block of the
//! base weight's left singular vectors, sharing one rank-`r` input map:
//!
//! `ΔW_k = U0[:, block(k)] · O_k · diag(μ) · O′ · V0[:, :r]ᵀ`
//!
//! so a single ortho expert can absorb a style exactly, while no single map
//! fits the style average. Inputs are zero-mean per token, with extra
//! variance `gain²` along a style-specific unit direction inside
//! `span(V0[:, :r])`; the bottleneck's per-channel RMS therefore carries the
//! style, and its per-channel mean does not.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{householder_qr, randomized_svd, Matrix, DEFAULT_POWER_ITERS};
use crate::math;
use crate::seq::SeqBatch;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TaskSpec {
    pub d_model: usize,
    pub seq_len: usize,
    pub styles: usize,
    /// Adapted layers; consecutive layers are joined by `tanh`.
    pub layers: usize,
    /// Multiplier on every teacher delta; 0 makes `w0` the teacher.
    pub teacher_scale: f64,
    /// Standard deviation of the style direction in the input.
    pub input_gain: f64,
    /// Standard deviation of additive target noise (irreducible loss).
    pub target_noise: f64,
    /// Singular values of the top `E·r` block run linearly from `spectrum_hi`
    /// down to `spectrum_lo`; the tail decays geometrically from `spectrum_tail`.
    pub spectrum_hi: f64,
    pub spectrum_lo: f64,
    pub spectrum_tail: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            d_model: 64,
            seq_len: 128,
            styles: 4,
            layers: 1,
            teacher_scale: 0.5,
            input_gain: 3.0,
            target_noise: 1.0,
            spectrum_hi: 2.0,
            spectrum_lo: 1.0,
            spectrum_tail: 0.05,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.seq_len == 0 || self.styles == 0 || self.layers == 0 {
            return Err(Error::InvalidConfig("task counts must be >= 1".into()));
        }
        for (name, v) in [
            ("teacher_scale", self.teacher_scale),
            ("input_gain", self.input_gain),
            ("target_noise", self.target_noise),
            ("spectrum_tail", self.spectrum_tail),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(alloc::format!("task {name} must be finite and >= 0")));
            }
        }
        if !(self.spectrum_hi >= self.spectrum_lo && self.spectrum_lo > self.spectrum_tail) {
            return Err(Error::InvalidConfig(
                "task spectrum needs spectrum_hi >= spectrum_lo > spectrum_tail".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskLayer {
    pub w0: Matrix,
    /// One teacher delta per style, `d × d`.
    pub deltas: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub experts: usize,
    pub rank: usize,
    pub layers: Vec<TaskLayer>,
    /// Unit input direction per style (first layer only).
    pub style_axes: Vec<Vec<f64>>,
}

/// One training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: SeqBatch,
    pub target: SeqBatch,
    pub styles: Vec<usize>,
    pub sigma: Vec<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    householder_qr(&gaussian(rng, n, n)).expect("square").0
}

/// Random rotation with determinant +1.
fn random_rotation(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut q = random_orthogonal(rng, n);
    if crate::linalg::determinant(&q).unwrap_or(1.0) < 0.0 {
        let flipped: Vec<f64> = q.column(0).iter().map(|v| -v).collect();
        q.set_column(0, &flipped);
    }
    q
}

fn unit(v: &mut [f64]) {
    let n = math::norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

impl SyntheticTask {
    /// Builds the task for an adapter with `experts` experts of rank `rank`.
    /// Style `k` lives in singular block `k mod E`.
    pub fn new(spec: TaskSpec, experts: usize, rank: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let d = spec.d_model;
        if experts == 0 || rank == 0 {
            return Err(Error::InvalidConfig("experts and rank must be >= 1".into()));
        }
        let blocks = if experts * rank <= d { experts } else { (d / rank).max(1) };
        if rank > d {
            return Err(Error::InvalidConfig(alloc::format!("rank {rank} exceeds d_model {d}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let top = blocks * rank;
        let spectrum: Vec<f64> = (0..d)
            .map(|i| {
                if i < top {
                    let t = if top > 1 { i as f64 / (top - 1) as f64 } else { 0.0 };
                    spec.spectrum_hi - (spec.spectrum_hi - spec.spectrum_lo) * t
                } else {
                    spec.spectrum_tail * libm::pow(0.9, (i - top) as f64)
                }
            })
            .collect();
        let mu: Vec<f64> = (0..rank)
            .map(|j| if rank > 1 { 1.0 - 0.5 * j as f64 / (rank - 1) as f64 } else { 1.0 })
            .collect();

        let mut layers = Vec::with_capacity(spec.layers);
        let mut style_axes = Vec::new();
        for layer in 0..spec.layers {
            let mut u0 = random_orthogonal(&mut rng, d);
            let v0 = random_orthogonal(&mut rng, d);
            // Match the sign convention of the SVD routines so the adapter's
            // slices coincide with the teacher's blocks.
            for j in 0..d {
                let col = u0.column(j);
                let big = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
                if big < 0.0 {
                    let flipped: Vec<f64> = col.iter().map(|v| -v).collect();
                    u0.set_column(j, &flipped);
                }
            }
            let w0 = u0.mul(&Matrix::from_diag(&spectrum)).mul_t(&v0);
            let v_top = v0.columns(0..rank);
            let shared = Matrix::from_diag(&mu).mul(&random_rotation(&mut rng, rank)).mul_t(&v_top);
            let deltas = (0..spec.styles)
                .map(|k| {
                    let block = k % blocks;
                    let u_block = u0.columns(block * rank..(block + 1) * rank);
                    u_block.mul(&random_rotation(&mut rng, rank)).mul(&shared)
                })
                .collect();
            if layer == 0 {
                for _ in 0..spec.styles {
                    let mut w: Vec<f64> = (0..rank).map(|_| StandardNormal.sample(&mut rng)).collect();
                    unit(&mut w);
                    let mut axis = vec![0.0; d];
                    v_top.mul_vec_into(&w, &mut axis);
                    style_axes.push(axis);
                }
            }
            layers.push(TaskLayer { w0, deltas });
        }
        Ok(Self {
            spec,
            experts,
            rank,
            layers,
            style_axes,
        })
    }

    pub fn base_weights(&self) -> Vec<Matrix> {
        self.layers.iter().map(|l| l.w0.clone()).collect()
    }

    /// Smallest pairwise `‖ΔW_k − ΔW_k′‖_F / ‖ΔW_k‖_F` over the first layer.
    pub fn min_distinguishability(&self) -> f64 {
        let deltas = &self.layers[0].deltas;
        let mut best = f64::INFINITY;
        for (i, a) in deltas.iter().enumerate() {
            for (j, b) in deltas.iter().enumerate() {
                if i != j {
                    let n = a.frobenius_norm();
                    if n > 0.0 {
                        best = best.min(a.sub(b).expect("same shape").frobenius_norm() / n);
                    }
                }
            }
        }
        best
    }

    /// Teacher map for one style applied to one token.
    fn teach(&self, style: usize, x: &[f64], out: &mut [f64]) {
        let d = self.spec.d_model;
        let mut h = x.to_vec();
        let mut tmp = vec![0.0; d];
        for (l, layer) in self.layers.iter().enumerate() {
            layer.w0.mul_vec_into(&h, out);
            if self.spec.teacher_scale != 0.0 {
                layer.deltas[style].mul_vec_into(&h, &mut tmp);
                math::axpy(self.spec.teacher_scale, &tmp, out);
            }
            if l + 1 < self.layers.len() {
                for (hi, o) in h.iter_mut().zip(out.iter()) {
                    *hi = math::tanh(*o);
                }
            }
        }
    }

    /// Draws styles uniformly, inputs, noisy targets and `σ ~ U[0, 1]`.
    pub fn generate_batch<R: Rng>(&self, batch: usize, rng: &mut R) -> Batch {
        let d = self.spec.d_model;
        let len = self.spec.seq_len;
        let mut x = SeqBatch::zeros(batch, len, d);
        let mut target = SeqBatch::zeros(batch, len, d);
        let mut styles = Vec::with_capacity(batch);
        let mut sigma = Vec::with_capacity(batch);
        for b in 0..batch {
            let k = rng.random_range(0..self.spec.styles);
            styles.push(k);
            sigma.push(rng.random::<f64>());
            let axis = &self.style_axes[k];
            for t in 0..len {
                let xt = x.token_mut(b, t);
                for v in xt.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                let along = math::dot(xt, axis);
                math::axpy((self.spec.input_gain - 1.0) * along, axis, xt);
                let xt = xt.to_vec();
                let yt = target.token_mut(b, t);
                self.teach(k, &xt, yt);
                if self.spec.target_noise > 0.0 {
                    for v in yt.iter_mut() {
                        let n: f64 = StandardNormal.sample(rng);
                        *v += self.spec.target_noise * n;
                    }
                }
            }
        }
        Batch {
            x,
            target,
            styles,
            sigma,
        }
    }

    /// Pre-run calibration on the first layer, using the adapter's own SVD
    /// slices of `w0`.
    pub fn fit_check(&self, svd_seed: u64) -> Result<FitReport> {
        let layer = &self.layers[0];
        let d = self.spec.d_model;
        let r = self.rank;
        let width = (self.experts * r + crate::adapter::SVD_OVERSAMPLE).min(d);
        let svd = randomized_svd(&layer.w0, width, DEFAULT_POWER_ITERS, svd_seed)?;
        let q = svd.v.columns(0..r);
        let blocks = (width / r).min(self.experts);
        let scaled: Vec<Matrix> = layer.deltas.iter().map(|m| m.scale(self.spec.teacher_scale)).collect();
        let mut single = 0.0f64;
        for delta in &scaled {
            let n = delta.frobenius_norm();
            if n == 0.0 {
                continue;
            }
            // Best expert: project onto that expert's output block and the
            // shared input rows.
            let best = (0..blocks)
                .map(|e| {
                    let p = svd.u.columns(e * r..(e + 1) * r);
                    let core = p.t_mul(delta).mul(&q);
                    let fit = p.mul(&core).mul_t(&q);
                    delta.sub(&fit).expect("same shape").frobenius_norm() / n
                })
                .fold(f64::INFINITY, f64::min);
            single = single.max(best);
        }
        let mut mean = Matrix::zeros(d, d);
        for delta in &scaled {
            mean.add_assign_scaled(1.0 / scaled.len() as f64, delta);
        }
        let pooled = scaled
            .iter()
            .filter(|m| m.frobenius_norm() > 0.0)
            .map(|m| m.sub(&mean).expect("same shape").frobenius_norm() / m.frobenius_norm())
            .fold(f64::INFINITY, f64::min);
        Ok(FitReport {
            single_style_residual: single,
            pooled_residual: pooled,
            distinguishability: self.min_distinguishability(),
        })
    }
}

/// Relative residuals of the best single-expert fit per style and of the
/// best style-agnostic map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    /// Worst style's residual when fitted by its best expert.
    pub single_style_residual: f64,
    /// Smallest residual left by the style average.
    pub pooled_residual: f64,
    pub distinguishability: f64,
}
