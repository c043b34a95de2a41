//! Tridiagonal linear algebra used by the implicit time steppers.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Symmetric-profile tridiagonal matrix with constant off-diagonals,
/// the shape produced by the three-point Laplacian plus a diagonal
/// potential. Solved by the Thomas algorithm.
#[derive(Debug, Clone)]
pub struct Tridiag<T> {
    /// Main diagonal, length `n`.
    pub diag: Vec<T>,
    /// Constant sub/super-diagonal value.
    pub off: T,
}

impl<T: Real> Tridiag<T> {
    pub fn new(diag: Vec<T>, off: T) -> Self {
        assert!(!diag.is_empty(), "empty tridiagonal system");
        Tridiag { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Matrix-vector product.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let n = self.len();
        assert_eq!(x.len(), n, "tridiag apply: length mismatch");
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.off * x[i - 1];
            }
            if i + 1 < n {
                v += self.off * x[i + 1];
            }
            y[i] = v;
        }
        y
    }

    /// Solve `A x = rhs` by the Thomas algorithm.
    ///
    /// Fails only if a pivot vanishes, which cannot happen for the
    /// diagonally dominant operators the steppers build.
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        let n = self.len();
        assert_eq!(rhs.len(), n, "tridiag solve: length mismatch");
        let mut c_prime = vec![T::zero(); n];
        let mut x = vec![T::zero(); n];

        let mut pivot = self.diag[0];
        if pivot == T::zero() || !pivot.is_finite() {
            return Err(Error::StepFailure {
                step: 0,
                reason: "zero or non-finite pivot in tridiagonal solve".into(),
            });
        }
        c_prime[0] = self.off / pivot;
        x[0] = rhs[0] / pivot;

        for i in 1..n {
            pivot = self.diag[i] - self.off * c_prime[i - 1];
            if pivot == T::zero() || !pivot.is_finite() {
                return Err(Error::StepFailure {
                    step: i,
                    reason: "zero or non-finite pivot in tridiagonal solve".into(),
                });
            }
            c_prime[i] = self.off / pivot;
            x[i] = (rhs[i] - self.off * x[i - 1]) / pivot;
        }

        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= c_prime[i] * next;
        }
        Ok(x)
    }
}
