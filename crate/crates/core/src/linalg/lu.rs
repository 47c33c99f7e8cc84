use alloc::vec::Vec;

use super::Matrix;
use crate::{Error, Result};

const SINGULAR_TOLERANCE: f64 = 1e-12;

/// Partial-pivoting LU factorization `P a = L U`, stored packed.
#[derive(Debug, Clone)]
pub struct Lu {
    packed: Matrix,
    perm: Vec<usize>,
    swaps: usize,
}

impl Lu {
    /// Factors a square matrix. A pivot below `1e-12 · max|a|` is treated as
    /// singular.
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimMismatch {
                op: "lu",
                left: a.shape(),
                right: a.shape(),
            });
        }
        let n = a.rows();
        let scale = a.max_abs();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if scale == 0.0 || pmax < SINGULAR_TOLERANCE * scale {
                return Err(Error::Singular { pivot: k });
            }
            if p != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
                perm.swap(k, p);
                swaps += 1;
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self {
            packed: lu,
            perm,
            swaps,
        })
    }

    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.packed.rows();
        if b.rows() != n {
            return Err(Error::DimMismatch {
                op: "solve",
                left: self.packed.shape(),
                right: b.shape(),
            });
        }
        let m = b.cols();
        let mut x = Matrix::from_fn(n, m, |i, j| b[(self.perm[i], j)]);
        for i in 0..n {
            for k in 0..i {
                let l = self.packed[(i, k)];
                if l != 0.0 {
                    for j in 0..m {
                        x[(i, j)] -= l * x[(k, j)];
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let u = self.packed[(i, k)];
                if u != 0.0 {
                    for j in 0..m {
                        x[(i, j)] -= u * x[(k, j)];
                    }
                }
            }
            let d = self.packed[(i, i)];
            for j in 0..m {
                x[(i, j)] /= d;
            }
        }
        Ok(x)
    }

    pub fn determinant(&self) -> f64 {
        let n = self.packed.rows();
        let d: f64 = (0..n).map(|i| self.packed[(i, i)]).product();
        if self.swaps % 2 == 0 {
            d
        } else {
            -d
        }
    }
}

/// Solves `a · X = b` exactly (up to rounding) by partial-pivot LU.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != a.rows() {
        return Err(Error::DimMismatch {
            op: "solve",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Lu::factor(a)?.solve(b)
}

pub fn determinant(a: &Matrix) -> Result<f64> {
    match Lu::factor(a) {
        Ok(lu) => Ok(lu.determinant()),
        Err(Error::Singular { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}
