use alloc::vec::Vec;

use super::Matrix;
use crate::math;
use crate::{Error, Result};

/// Pivots smaller than this fraction of the original column norm count as
/// rank deficiency.
const PIVOT_TOLERANCE: f64 = 1e-12;

/// Thin Householder QR of an `n × k` matrix (`n ≥ k`).
///
/// `Q` always has exactly orthonormal columns, even for rank-deficient input:
/// a zero column gets no reflector and its `Q` column completes the basis.
/// Signs are fixed so that `diag(R) ≥ 0`.
pub fn householder_qr(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let (n, k) = m.shape();
    if n < k {
        return Err(Error::DimMismatch {
            op: "qr",
            left: m.shape(),
            right: (k, k),
        });
    }
    let mut a = m.clone();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(k);
    for j in 0..k {
        let x: Vec<f64> = (j..n).map(|i| a[(i, j)]).collect();
        let xnorm = math::norm(&x);
        if xnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = math::norm(&v);
        if vnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        for vi in v.iter_mut() {
            *vi /= vnorm;
        }
        apply_reflector(&mut a, &v, j, j);
        reflectors.push(Some(v));
    }

    let mut q = Matrix::zeros(n, k);
    for j in 0..k {
        q[(j, j)] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        if let Some(v) = v {
            apply_reflector(&mut q, v, j, 0);
        }
    }

    let mut r = Matrix::from_fn(k, k, |i, j| if i <= j { a[(i, j)] } else { 0.0 });
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            for c in 0..k {
                r[(j, c)] = -r[(j, c)];
            }
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok((q, r))
}

/// Applies `H = I − 2vvᵀ` (with `v` acting on rows `row0..`) to columns
/// `col0..` of `a`.
fn apply_reflector(a: &mut Matrix, v: &[f64], row0: usize, col0: usize) {
    let cols = a.cols();
    let mut w = alloc::vec![0.0; cols - col0];
    for (t, vi) in v.iter().enumerate() {
        let row = &a.row(row0 + t)[col0..];
        math::axpy(*vi, row, &mut w);
    }
    for (t, vi) in v.iter().enumerate() {
        let row = &mut a.row_mut(row0 + t)[col0..];
        math::axpy(-2.0 * vi, &w, row);
    }
}

/// Orthonormal basis for the column space of a full-column-rank matrix.
pub fn qr_orthonormalize(m: &Matrix) -> Result<Matrix> {
    let (q, r) = householder_qr(m)?;
    for j in 0..m.cols() {
        let col_norm = math::norm(&m.column(j));
        if col_norm == 0.0 || r[(j, j)].abs() < PIVOT_TOLERANCE * col_norm {
            return Err(Error::RankDeficient { column: j });
        }
    }
    Ok(q)
}
