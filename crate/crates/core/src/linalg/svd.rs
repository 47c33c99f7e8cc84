use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{householder_qr, Matrix};
use crate::math;
use crate::{Error, Result};

/// Power iterations used when the caller has no better information about the
/// spectrum.
pub const DEFAULT_POWER_ITERS: usize = 2;

const MAX_SWEEPS: usize = 80;

/// Thin SVD `w ≈ u · diag(sigma) · vᵀ`, singular values nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.mul_t(&self.v)
    }
}

/// Dense SVD by one-sided Jacobi rotations.
///
/// Returns `min(m, n)` triplets. Columns belonging to (numerically) zero
/// singular values are completed to an orthonormal set.
pub fn jacobi_svd(a: &Matrix) -> Svd {
    if a.rows() < a.cols() {
        let t = jacobi_svd(&a.transpose());
        return Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
    }
    let (m, n) = a.shape();
    // Work column-wise: store columns contiguously.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = math::dot(&w[p], &w[p]);
                let beta = math::dot(&w[q], &w[q]);
                let gamma = math::dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * math::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + math::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(usize, f64)> = w.iter().map(|c| math::norm(c)).enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let smax = order.first().map_or(0.0, |o| o.1);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for (j, s) in &order {
        let mut col = w[*j].clone();
        if *s > smax * 1e-14 * n as f64 && *s > 0.0 {
            for x in col.iter_mut() {
                *x /= s;
            }
        } else {
            col.iter_mut().for_each(|x| *x = 0.0);
        }
        u_cols.push(col);
        v_cols.push(v[*j].clone());
        sigma.push(*s);
    }
    complete_orthonormal(&mut u_cols, m);

    Svd {
        u: from_columns(m, &u_cols),
        sigma,
        v: from_columns(n, &v_cols),
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Re-orthonormalizes columns in order with two-pass Gram-Schmidt, replacing
/// columns that vanish under projection with the first usable axis vector.
fn complete_orthonormal(cols: &mut [Vec<f64>], dim: usize) {
    let mut next_axis = 0;
    for k in 0..cols.len() {
        let mut c = cols[k].clone();
        let keep = math::norm(&c) > 0.5;
        if keep {
            project_out(&mut c, &cols[..k]);
        }
        let mut nrm = math::norm(&c);
        if !keep || nrm < 1e-8 {
            loop {
                assert!(next_axis < dim, "cannot complete orthonormal basis");
                c = vec![0.0; dim];
                c[next_axis] = 1.0;
                next_axis += 1;
                project_out(&mut c, &cols[..k]);
                nrm = math::norm(&c);
                if nrm > 1e-6 {
                    break;
                }
            }
        }
        for x in c.iter_mut() {
            *x /= nrm;
        }
        cols[k] = c;
    }
}

fn project_out(c: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let d = math::dot(c, b);
            math::axpy(-d, b, c);
        }
    }
}

fn from_columns(rows: usize, cols: &[Vec<f64>]) -> Matrix {
    Matrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

/// Randomized SVD with a Gaussian range finder and `power_iters` rounds of
/// re-orthonormalized subspace iteration.
///
/// `q` is the full sketch width: no extra oversampling is added. The
/// factors are canonicalized so the largest-magnitude entry of every `u`
/// column is positive. Deterministic for a given `rng_seed`.
pub fn randomized_svd(w: &Matrix, q: usize, power_iters: usize, rng_seed: u64) -> Result<Svd> {
    let (d_out, d_in) = w.shape();
    let max = d_out.min(d_in);
    if q > max {
        return Err(Error::InvalidRank { rank: q, max });
    }
    if !w.is_finite() {
        return Err(Error::NonFinite("randomized_svd input"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let omega = Matrix::from_fn(d_in, q, |_, _| StandardNormal.sample(&mut rng));

    let mut basis = householder_qr(&w.mul(&omega))?.0;
    for _ in 0..power_iters {
        let z = householder_qr(&w.t_mul(&basis))?.0;
        basis = householder_qr(&w.mul(&z))?.0;
    }

    // Small problem: b = basisᵀ w is q × d_in. Factor bᵀ = U' Σ V'ᵀ so that
    // b = V' Σ U'ᵀ; the left factor V' is an exact product of rotations.
    let b = basis.t_mul(w);
    let small = jacobi_svd(&b.transpose());
    let mut u = basis.mul(&small.v);
    let mut v = small.u;
    let sigma = small.sigma;

    for j in 0..u.cols() {
        let (mut arg, mut best) = (0, 0.0);
        for i in 0..u.rows() {
            if u[(i, j)].abs() > best {
                best = u[(i, j)].abs();
                arg = i;
            }
        }
        if u[(arg, j)] < 0.0 {
            for i in 0..u.rows() {
                u[(i, j)] = -u[(i, j)];
            }
            for i in 0..v.rows() {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }
    Ok(Svd { u, sigma, v })
}
