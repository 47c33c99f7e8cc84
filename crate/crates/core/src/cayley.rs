//! Cayley map from an unconstrained square seed to a special orthogonal
//! matrix, `R = (I − A)(I + A)⁻¹` with `A = S − Sᵀ`, and its vector-Jacobian
//! product.
//!
//! `I + A` is invertible for every real skew `A` (its eigenvalues are
//! `1 + iθ`), so both directions are computed with exact LU solves and never
//! with a truncated series.

use crate::linalg::{solve, Matrix};
use crate::{Error, Result};

/// Trainable `r × r` seed; only its skew part `S − Sᵀ` affects the rotation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CayleySeed(Matrix);

impl CayleySeed {
    pub fn new(s: Matrix) -> Result<Self> {
        if !s.is_square() {
            return Err(Error::DimMismatch {
                op: "cayley seed",
                left: s.shape(),
                right: s.shape(),
            });
        }
        if !s.is_finite() {
            return Err(Error::NonFinite("cayley seed"));
        }
        Ok(Self(s))
    }

    pub fn zeros(r: usize) -> Self {
        Self(Matrix::zeros(r, r))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.0.as_mut_slice()
    }

    /// `A = S − Sᵀ`, skew by construction.
    pub fn skew(&self) -> Matrix {
        let s = &self.0;
        Matrix::from_fn(s.rows(), s.cols(), |i, j| s[(i, j)] - s[(j, i)])
    }
}

/// `(I + A, I − A)` for the seed's skew part.
fn shifted(seed: &CayleySeed) -> (Matrix, Matrix) {
    let a = seed.skew();
    let n = a.rows();
    let plus = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } + a[(i, j)]);
    let minus = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - a[(i, j)]);
    (plus, minus)
}

/// `R = (I + A)⁻¹(I − A)`, which equals `(I − A)(I + A)⁻¹` because both
/// factors are functions of `A` and commute.
pub fn cayley_forward(seed: &CayleySeed) -> Matrix {
    let (plus, minus) = shifted(seed);
    solve(&plus, &minus).expect("I + A is invertible for skew A")
}

/// Gradient of `⟨upstream, R(S)⟩` with respect to `S`.
///
/// From `dR = −(I + R) dA (I + A)⁻¹` the gradient with respect to `A` is
/// `G_A = −(I + Rᵀ) G (I + A)⁻ᵀ`, and `(I + A)ᵀ = I − A`. The map
/// `S ↦ S − Sᵀ` then gives `G_S = G_A − G_Aᵀ`.
pub fn cayley_vjp(seed: &CayleySeed, upstream: &Matrix) -> Result<Matrix> {
    let n = seed.dim();
    if upstream.shape() != (n, n) {
        return Err(Error::DimMismatch {
            op: "cayley_vjp",
            left: (n, n),
            right: upstream.shape(),
        });
    }
    let (plus, minus) = shifted(seed);
    let r = solve(&plus, &minus).expect("I + A is invertible for skew A");
    // X = G (I − A)⁻¹  ⇔  (I + A) Xᵀ = Gᵀ
    let x = solve(&plus, &upstream.transpose())
        .expect("I + A is invertible for skew A")
        .transpose();
    let mut ga = r.t_mul(&x);
    ga.add_assign_scaled(1.0, &x);
    let ga = ga.scale(-1.0);
    Ok(Matrix::from_fn(n, n, |i, j| ga[(i, j)] - ga[(j, i)]))
}
