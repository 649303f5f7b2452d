//! Small dense linear-algebra helpers shared by the inference modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Initial jitter relative to the mean diagonal.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before giving up, relative to the mean diagonal.
pub const JITTER_MAX: f64 = 1e-6;

/// Cholesky factorisation of `m + jitter·I`.
#[derive(Debug, Clone)]
pub struct JitteredCholesky<T: Scalar> {
    pub factor: Cholesky<T, Dyn>,
    pub jitter: T,
}

impl<T: Scalar> JitteredCholesky<T> {
    pub fn l(&self) -> DMatrix<T> {
        self.factor.l()
    }

    pub fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.factor.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<T>) -> DVector<T> {
        self.factor.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<T> {
        self.factor.inverse()
    }

    pub fn log_det(&self) -> T {
        log_det_lower(self.factor.l_dirty())
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut out = b.clone();
        self.factor.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }
}

/// `2 Σ log L_ii` for a lower-triangular factor.
pub fn log_det_lower<T: Scalar>(l: &DMatrix<T>) -> T {
    (0..l.nrows()).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * T::lit(2.0)
}

/// Cholesky with escalating jitter: starts at 1e-10·mean(diag) and grows by
/// 10× up to 1e-6·mean(diag) before reporting a singular system.
pub fn cholesky_with_jitter<T: Scalar>(m: &DMatrix<T>, context: &str) -> Result<JitteredCholesky<T>> {
    let n = m.nrows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mean_diag = m.diagonal().mean();
    let base = if mean_diag > T::zero() { mean_diag } else { T::one() };
    let mut jitter = base * T::lit(JITTER_START);
    let max = base * T::lit(JITTER_MAX) * T::lit(1.0 + 1e-9);
    while jitter <= max {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(factor) = Cholesky::new(shifted) {
            let diag_ok = (0..n).all(|i| {
                let d = factor.l_dirty()[(i, i)];
                d > T::zero() && d.is_finite()
            });
            if diag_ok {
                return Ok(JitteredCholesky { factor, jitter });
            }
        }
        jitter *= T::lit(10.0);
    }
    Err(Error::SingularSystem(format!("{context}: Cholesky failed with jitter up to {:e}", max.as_f64())))
}

/// Zeroes the strict upper triangle.
pub fn lower_triangle<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| if j <= i { m[(i, j)] } else { T::zero() })
}

pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}
