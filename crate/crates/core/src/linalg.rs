//! Small complex vector helpers and the Hermitian positive-definite solver
//! used by the adaptive weights.

use faer::{Mat, MatRef, Side};

use crate::{Error, Result};

pub use faer::c64;

/// `a^H b`.
#[inline]
pub fn dot(a: &[c64], b: &[c64]) -> c64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[inline]
pub fn norm_sqr(a: &[c64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

#[inline]
pub fn norm(a: &[c64]) -> f64 {
    norm_sqr(a).sqrt()
}

/// Scales `v` to unit Euclidean norm. Zero vectors are left untouched.
pub fn normalize(v: &mut [c64]) {
    let n = norm(v);
    if n > 0.0 {
        let inv = 1.0 / n;
        v.iter_mut().for_each(|x| *x *= inv);
    }
}

/// `exp(j * phase)`.
#[inline]
pub fn cis(phase: f64) -> c64 {
    let (s, c) = phase.sin_cos();
    c64::new(c, s)
}

pub fn column(v: &[c64]) -> Mat<c64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn column_to_vec(m: MatRef<'_, c64>, j: usize) -> Vec<c64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

/// Frobenius norm of a dense complex matrix.
pub fn frobenius(m: MatRef<'_, c64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            acc += m[(i, j)].norm_sqr();
        }
    }
    acc.sqrt()
}

/// Cholesky factor `R = L L^H` of a Hermitian positive-definite matrix.
///
/// Every solve goes through the triangular factor; the inverse is never formed.
#[derive(Debug, Clone)]
pub struct HermitianFactor {
    lower: Mat<c64>,
}

impl HermitianFactor {
    pub fn new(matrix: MatRef<'_, c64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let llt = matrix
            .llt(Side::Lower)
            .map_err(|_| Error::NotPositiveDefinite)?;
        let lower = llt.L().to_owned();
        // A finite but collapsed pivot still poisons every later solve.
        let (min, max) = (0..lower.nrows())
            .map(|i| lower[(i, i)].re)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        if !(min.is_finite() && min > 0.0) || min / max < 1e-10 {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { lower })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `L^{-1} x`: whitens a vector so that `|L^{-1} x|^2 = x^H R^{-1} x`.
    pub fn whiten(&self, x: &[c64]) -> Vec<c64> {
        let mut col = column(x);
        self.lower.solve_lower_triangular_in_place(&mut col);
        column_to_vec(col.as_ref(), 0)
    }

    /// Whitens every column of `rhs` in place.
    pub fn whiten_columns(&self, rhs: &mut Mat<c64>) {
        self.lower.solve_lower_triangular_in_place(rhs);
    }

    /// `R^{-1} b`.
    pub fn solve(&self, b: &[c64]) -> Vec<c64> {
        let mut col = column(b);
        self.lower.solve_lower_triangular_in_place(&mut col);
        self.lower
            .adjoint()
            .solve_upper_triangular_in_place(&mut col);
        column_to_vec(col.as_ref(), 0)
    }
}
