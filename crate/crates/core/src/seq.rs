//! Batched token sequences, `batch × len × dim` in row-major order.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    batch: usize,
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl SeqBatch {
    pub fn new(batch: usize, len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * len * dim {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} values for a {batch}x{len}x{dim} batch",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            len,
            dim,
            data,
        })
    }

    pub fn zeros(batch: usize, len: usize, dim: usize) -> Self {
        Self {
            batch,
            len,
            dim,
            data: vec![0.0; batch * len * dim],
        }
    }

    pub fn from_fn(
        batch: usize,
        len: usize,
        dim: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(batch * len * dim);
        for b in 0..batch {
            for t in 0..len {
                for d in 0..dim {
                    data.push(f(b, t, d));
                }
            }
        }
        Self {
            batch,
            len,
            dim,
            data,
        }
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.len, self.dim)
    }

    #[inline]
    pub fn token(&self, b: usize, t: usize) -> &[f64] {
        let off = (b * self.len + t) * self.dim;
        &self.data[off..off + self.dim]
    }

    #[inline]
    pub fn token_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        let off = (b * self.len + t) * self.dim;
        &mut self.data[off..off + self.dim]
    }

    /// All tokens of sample `b`, `len × dim` contiguous.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.len * self.dim;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SeqBatch {
        SeqBatch {
            batch: self.batch,
            len: self.len,
            dim: self.dim,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &SeqBatch) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| if (a - b).abs() > m { (a - b).abs() } else { m })
    }
}
