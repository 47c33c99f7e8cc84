//! Training objectives and their gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::router::check_simplex;
use crate::seq::SeqBatch;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BalanceConfig {
    pub weight: f64,
    /// Fraction of training before the term switches on.
    pub warmup_ratio: f64,
    pub per_bucket_coeff: f64,
    pub bucket_count: usize,
    /// Use mean gate probabilities in place of argmax counts for `f_e`.
    pub soft_counts: bool,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            weight: 5e-7,
            warmup_ratio: 0.4,
            per_bucket_coeff: 0.3,
            bucket_count: 4,
            soft_counts: false,
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::InvalidConfig("balance weight must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::InvalidConfig("balance warmup ratio must lie in [0, 1]".into()));
        }
        if self.bucket_count == 0 {
            return Err(Error::InvalidConfig("bucket count must be >= 1".into()));
        }
        Ok(())
    }

    /// First step at which the balance term is active: `⌈ρ_b · N⌉`.
    pub fn turn_on_step(&self, total_steps: usize) -> usize {
        math::ceil(self.warmup_ratio * total_steps as f64) as usize
    }

    pub fn active(&self, step: usize, total_steps: usize) -> bool {
        step >= self.turn_on_step(total_steps)
    }
}

/// Equal-width bucket of `sigma` over `[0, 1]`.
pub fn sigma_bucket(sigma: f64, buckets: usize) -> usize {
    let b = math::floor(sigma * buckets as f64);
    if b <= 0.0 {
        0
    } else {
        (b as usize).min(buckets - 1)
    }
}

/// Mean squared error over unmasked positions and all channels.
///
/// `mask` has one entry per `(sample, token)`; `true` keeps the position.
pub fn task_mse(y: &SeqBatch, target: &SeqBatch, mask: Option<&[bool]>) -> Result<(f64, SeqBatch)> {
    let (batch, len, dim) = y.shape();
    if target.shape() != y.shape() {
        return Err(Error::ShapeMismatch("target shape differs from prediction".into()));
    }
    if let Some(m) = mask {
        if m.len() != batch * len {
            return Err(Error::ShapeMismatch("mask must have batch x len entries".into()));
        }
    }
    let keep = |b: usize, t: usize| mask.map_or(true, |m| m[b * len + t]);
    let kept = (0..batch)
        .flat_map(|b| (0..len).map(move |t| (b, t)))
        .filter(|&(b, t)| keep(b, t))
        .count();
    if kept == 0 {
        return Err(Error::EmptyMask);
    }
    let denom = (kept * dim) as f64;
    let mut grad = SeqBatch::zeros(batch, len, dim);
    let mut loss = 0.0;
    for b in 0..batch {
        for t in 0..len {
            if !keep(b, t) {
                continue;
            }
            let g = grad.token_mut(b, t);
            for ((gi, yi), ti) in g.iter_mut().zip(y.token(b, t)).zip(target.token(b, t)) {
                let r = yi - ti;
                loss += r * r;
                *gi = 2.0 * r / denom;
            }
        }
    }
    Ok((loss / denom, grad))
}

/// `E · Σ_e f_e p_e` over the given rows and its gradient w.r.t. the gates,
/// with `f` held constant (hard counts) or equal to `p` (soft counts).
fn switch_term(g: &Matrix, rows: &[usize], soft: bool, scale: f64, grad: &mut Matrix) -> f64 {
    let experts = g.cols();
    let n = rows.len() as f64;
    let mut p = vec![0.0; experts];
    let mut f = vec![0.0; experts];
    for &b in rows {
        let row = g.row(b);
        math::axpy(1.0 / n, row, &mut p);
        if !soft {
            // Ties share the sample evenly.
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let winners = row.iter().filter(|&&v| v == max).count() as f64;
            for (fe, &v) in f.iter_mut().zip(row) {
                if v == max {
                    *fe += 1.0 / (n * winners);
                }
            }
        }
    }
    if soft {
        f.copy_from_slice(&p);
    }
    let e = experts as f64;
    let value = e * math::dot(&f, &p);
    let per_prob = if soft { 2.0 } else { 1.0 };
    for &b in rows {
        for (j, gj) in grad.row_mut(b).iter_mut().enumerate() {
            *gj += scale * per_prob * e * f[j] / n;
        }
    }
    value
}

/// Switch balance loss with a hard turn-on at `⌈ρ_b · N⌉` and a per-σ-bucket
/// term averaged over non-empty buckets.
///
/// Returns the weighted loss and its gradient w.r.t. `g`. Before turn-on both
/// are exactly zero.
pub fn switch_balance(
    g: &Matrix,
    step: usize,
    total_steps: usize,
    cfg: &BalanceConfig,
    bucket_ids: &[usize],
) -> Result<(f64, Matrix)> {
    let (batch, _) = g.shape();
    let mut grad = Matrix::zeros(batch, g.cols());
    if !cfg.active(step, total_steps) || batch == 0 {
        return Ok((0.0, grad));
    }
    check_simplex(g)?;
    if bucket_ids.len() != batch {
        return Err(Error::ShapeMismatch("one bucket id per sample".into()));
    }
    let all: Vec<usize> = (0..batch).collect();
    let mut loss = switch_term(g, &all, cfg.soft_counts, cfg.weight, &mut grad);

    let buckets: Vec<Vec<usize>> = (0..cfg.bucket_count)
        .map(|k| all.iter().copied().filter(|&b| bucket_ids[b] == k).collect())
        .collect();
    let filled = buckets.iter().filter(|b| !b.is_empty()).count();
    if filled > 0 && cfg.per_bucket_coeff != 0.0 {
        let c = cfg.per_bucket_coeff / filled as f64;
        let mut bucket_sum = 0.0;
        for rows in buckets.iter().filter(|b| !b.is_empty()) {
            bucket_sum += switch_term(g, rows, cfg.soft_counts, cfg.weight * c, &mut grad);
        }
        loss += c * bucket_sum;
    }
    Ok((cfg.weight * loss, grad))
}

/// Sum over samples `i` and ordered pairs of active experts `j ≠ k` of
/// `‖proj_{x̃_ik} x̃_ij‖²`, with the projection normalized by `‖x̃_ik‖² + eps`.
///
/// `outputs[i]` holds one row per expert. An expert is active for sample `i`
/// when its gate is strictly positive. Returns the loss and one gradient
/// matrix per sample.
pub fn output_orthogonality_loss(outputs: &[Matrix], gates: &Matrix, eps: f64) -> Result<(f64, Vec<Matrix>)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig("eps must be positive".into()));
    }
    if gates.rows() != outputs.len() {
        return Err(Error::ShapeMismatch("one gate row per sample".into()));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for (i, x) in outputs.iter().enumerate() {
        if x.rows() != gates.cols() {
            return Err(Error::ShapeMismatch("one output row per expert".into()));
        }
        let mut grad = Matrix::zeros(x.rows(), x.cols());
        accumulate_orthogonality(x, gates.row(i), eps, &mut loss, &mut grad);
        grads.push(grad);
    }
    Ok((loss, grads))
}

/// One sample's contribution to the orthogonality loss, added into `loss`
/// and `grad` (rows = experts).
pub fn accumulate_orthogonality(x: &Matrix, gates: &[f64], eps: f64, loss: &mut f64, grad: &mut Matrix) {
    let experts = x.rows();
    for j in 0..experts {
        if !(gates[j] > 0.0) {
            continue;
        }
        for k in 0..experts {
            if k == j || !(gates[k] > 0.0) {
                continue;
            }
            let a = x.row(j);
            let b = x.row(k);
            let u = math::dot(a, b);
            let n = math::dot(b, b);
            let d = n + eps;
            *loss += u * u * n / (d * d);
            let ca = 2.0 * u * n / (d * d);
            let cb = 2.0 * u * u * (eps - n) / (d * d * d);
            let (a, b) = (a.to_vec(), b.to_vec());
            math::axpy(ca, &b, grad.row_mut(j));
            let gk = grad.row_mut(k);
            math::axpy(ca, &a, gk);
            math::axpy(cb, &b, gk);
        }
    }
}

/// `−Σ_j Σ_i (s_ij − s̄_j)² / n`: rewards gates that vary across the batch.
pub fn routing_variance_loss(scores: &Matrix) -> Result<(f64, Matrix)> {
    let (n, experts) = scores.shape();
    if n == 0 {
        return Err(Error::ShapeMismatch("routing variance needs at least one sample".into()));
    }
    let nf = n as f64;
    let mut grad = Matrix::zeros(n, experts);
    let mut loss = 0.0;
    for j in 0..experts {
        let mean = (0..n).map(|i| scores[(i, j)]).sum::<f64>() / nf;
        for i in 0..n {
            let c = scores[(i, j)] - mean;
            loss -= c * c / nf;
            grad.row_mut(i)[j] = -2.0 * c / nf;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(batch: usize, len: usize, dim: usize, f: impl Fn(usize) -> f64) -> SeqBatch {
        let data = (0..batch * len * dim).map(f).collect();
        SeqBatch::new(batch, len, dim, data).unwrap()
    }

    #[test]
    fn mse_examples() {
        let y = seq(2, 3, 2, |i| i as f64 * 0.1);
        assert_eq!(task_mse(&y, &y, None).unwrap().0, 0.0);
        let t = y.map(|v| v - 1.0);
        assert!((task_mse(&y, &t, None).unwrap().0 - 1.0).abs() < 1e-15);

        // Second sample masked out: loss equals MSE over the first sample.
        let t = seq(2, 3, 2, |i| if i < 6 { 0.5 } else { 100.0 });
        let mask = [true, true, true, false, false, false];
        let (masked, grad) = task_mse(&y, &t, Some(&mask)).unwrap();
        let first = (0..6).map(|i| (i as f64 * 0.1 - 0.5).powi(2)).sum::<f64>() / 6.0;
        assert!((masked - first).abs() < 1e-15);
        assert!(grad.sample(1).iter().all(|&g| g == 0.0));
        assert!(matches!(task_mse(&y, &t, Some(&[false; 6])), Err(Error::EmptyMask)));
    }

    #[test]
    fn switch_examples() {
        let cfg = BalanceConfig {
            weight: 1.0,
            warmup_ratio: 0.0,
            per_bucket_coeff: 0.0,
            ..Default::default()
        };
        // Uniform gates, ties split evenly: the Switch minimum.
        let g = Matrix::from_fn(4, 4, |_, _| 0.25);
        let (l, _) = switch_balance(&g, 0, 10, &cfg, &[0; 4]).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        // One-hot onto expert 0.
        let g = Matrix::from_fn(3, 4, |_, e| if e == 0 { 1.0 } else { 0.0 });
        let (l, _) = switch_balance(&g, 0, 10, &cfg, &[0; 3]).unwrap();
        assert!((l - 4.0).abs() < 1e-15);
    }

    #[test]
    fn switch_turn_on_is_a_step() {
        let cfg = BalanceConfig {
            weight: 2.0,
            warmup_ratio: 0.4,
            ..Default::default()
        };
        let g = Matrix::from_fn(4, 3, |b, e| if e == b % 2 { 0.8 } else { 0.1 });
        let ids = [0, 1, 2, 3];
        assert_eq!(cfg.turn_on_step(28164), 11266);
        assert_eq!(cfg.turn_on_step(10), 4);
        for step in 0..4 {
            let (l, grad) = switch_balance(&g, step, 10, &cfg, &ids).unwrap();
            assert_eq!(l, 0.0);
            assert!(grad.as_slice().iter().all(|&v| v == 0.0));
        }
        assert!(switch_balance(&g, 4, 10, &cfg, &ids).unwrap().0 > 0.0);
    }

    #[test]
    fn orthogonality_examples() {
        let gates = Matrix::from_fn(1, 2, |_, _| 0.5);
        let zero = Matrix::zeros(2, 3);
        let (l, g) = output_orthogonality_loss(&[zero], &gates, 1e-8).unwrap();
        assert_eq!(l, 0.0);
        assert!(g[0].as_slice().iter().all(|&v| v == 0.0));

        let orth = Matrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]]);
        assert_eq!(output_orthogonality_loss(&[orth], &gates, 1e-8).unwrap().0, 0.0);

        let same = Matrix::from_rows(&[&[0.6, 0.8, 0.0], &[0.6, 0.8, 0.0]]);
        let (l, _) = output_orthogonality_loss(&[same.clone()], &gates, 1e-12).unwrap();
        assert!((l - 2.0).abs() < 1e-10);

        // A gate of exactly zero deactivates the expert.
        let masked = Matrix::from_rows(&[&[1.0, 0.0]]);
        assert_eq!(output_orthogonality_loss(&[same], &masked, 1e-12).unwrap().0, 0.0);
    }

    #[test]
    fn variance_examples() {
        let s = Matrix::from_rows(&[&[0.0], &[1.0]]);
        let (l, _) = routing_variance_loss(&s).unwrap();
        assert!((l + 0.25).abs() < 1e-15);

        let same = Matrix::from_fn(5, 3, |_, e| 0.1 * (e + 1) as f64);
        let (l, g) = routing_variance_loss(&same).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));

        let s = Matrix::from_fn(4, 3, |i, e| ((i * 7 + e * 3) % 5) as f64 * 0.2);
        let shifted = Matrix::from_fn(4, 3, |i, e| s[(i, e)] + if e == 1 { 3.0 } else { 0.0 });
        let (a, _) = routing_variance_loss(&s).unwrap();
        let (b, _) = routing_variance_loss(&shifted).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn buckets_cover_unit_interval() {
        assert_eq!(sigma_bucket(0.0, 4), 0);
        assert_eq!(sigma_bucket(0.24, 4), 0);
        assert_eq!(sigma_bucket(0.25, 4), 1);
        assert_eq!(sigma_bucket(1.0, 4), 3);
    }
}
