//! Dense linear algebra: the [`Matrix`] carrier, Householder QR, partial-pivot
//! LU solves, one-sided Jacobi SVD and the randomized range-finder SVD.

mod lu;
mod qr;
mod svd;

pub use lu::{determinant, solve, Lu};
pub use qr::{householder_qr, qr_orthonormalize};
pub use svd::{jacobi_svd, randomized_svd, Svd, DEFAULT_POWER_ITERS};

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut, Range};

use crate::math;
use crate::{Error, Result};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "RawMatrix"))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[cfg(feature = "serde")]
#[derive(serde::Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[cfg(feature = "serde")]
impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting bad lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_vec(rows, cols, data)
    }

    /// Convenience constructor from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::from_vec(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    /// Copy of the column block `range`.
    pub fn columns(&self, range: Range<usize>) -> Matrix {
        Matrix::from_fn(self.rows, range.len(), |i, j| self[(i, range.start + j)])
    }

    /// Copy of the row block `range`.
    pub fn row_block(&self, range: Range<usize>) -> Matrix {
        Matrix::from_vec(
            range.len(),
            self.cols,
            self.data[range.start * self.cols..range.end * self.cols].to_vec(),
        )
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::DimMismatch {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        Ok(self.mul(rhs))
    }

    /// Unchecked product for internal use where shapes are invariants.
    pub(crate) fn mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul shape");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a != 0.0 {
                    math::axpy(a, rhs.row(k), orow);
                }
            }
        }
        out
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub(crate) fn t_mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.rows, rhs.rows, "t_mul shape");
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = rhs.row(k);
            for (i, a) in arow.iter().enumerate() {
                if *a != 0.0 {
                    math::axpy(*a, brow, out.row_mut(i));
                }
            }
        }
        out
    }

    /// `self · rhsᵀ` without materializing the transpose.
    pub(crate) fn mul_t(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.cols, "mul_t shape");
        Matrix::from_fn(self.rows, rhs.rows, |i, j| math::dot(self.row(i), rhs.row(j)))
    }

    /// `y = self · x` for a column vector `x`.
    pub(crate) fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = math::dot(self.row(i), x);
        }
    }

    /// `y += selfᵀ · x`.
    pub(crate) fn t_mul_vec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (i, xi) in x.iter().enumerate() {
            if *xi != 0.0 {
                math::axpy(*xi, self.row(i), y);
            }
        }
    }

    /// `self += alpha · u vᵀ`.
    pub(crate) fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, ui) in u.iter().enumerate() {
            let c = alpha * ui;
            if c != 0.0 {
                math::axpy(c, v, self.row_mut(i));
            }
        }
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::DimMismatch {
                op,
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| f(*a, *b)).collect();
        Ok(Matrix::from_vec(self.rows, self.cols, data))
    }

    pub(crate) fn add_assign_scaled(&mut self, alpha: f64, rhs: &Matrix) {
        assert_eq!(self.shape(), rhs.shape());
        math::axpy(alpha, &rhs.data, &mut self.data);
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|v| alpha * v).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// `‖selfᵀ self − I‖_F`, the usual orthonormal-columns defect.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut g = self.t_mul(self);
        for i in 0..g.rows {
            g[(i, i)] -= 1.0;
        }
        g.frobenius_norm()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// `aᵀ b`. Exists as a named operation so invariant checks read as Gram
/// statements rather than bare products.
pub fn gram(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::DimMismatch {
            op: "gram",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(a.t_mul(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_rejects_non_finite_and_bad_length() {
        assert_eq!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite("matrix"))
        );
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn gram_of_orthonormal_is_identity() {
        let q = Matrix::from_rows(&[[0.6, 0.0], [0.8, 0.0], [0.0, 1.0]]);
        let g = gram(&q, &q).unwrap();
        assert!(g.sub(&Matrix::identity(2)).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn gram_of_disjoint_slices_is_zero() {
        let u = Matrix::identity(4);
        let g = gram(&u.columns(0..2), &u.columns(2..4)).unwrap();
        assert_eq!(g, Matrix::zeros(2, 2));
    }

    #[test]
    fn gram_of_axis_vectors() {
        let a = Matrix::from_rows(&[[1.0], [0.0]]);
        let b = Matrix::from_rows(&[[0.0], [1.0]]);
        assert_eq!(gram(&a, &b).unwrap(), Matrix::zeros(1, 1));
    }

    #[test]
    fn gram_dim_mismatch() {
        let a = Matrix::zeros(2, 1);
        let b = Matrix::zeros(3, 1);
        assert!(matches!(gram(&a, &b), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn fused_products_match_plain_products() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.5 - 2.0);
        let b = Matrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 - 1.0);
        assert_eq!(a.t_mul(&b), a.transpose().mul(&b));
        let c = Matrix::from_fn(5, 4, |i, j| (i as f64) - (j as f64) * 0.25);
        assert_eq!(a.mul_t(&c), a.mul(&c.transpose()));
    }
}
