use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Smallest reciprocal condition number accepted for an unregularized solve.
pub const MIN_RCOND: f64 = 1e-12;

/// Cholesky factorization of a symmetric positive definite system matrix.
pub(crate) struct SpdSolver {
    chol: Cholesky<f64, Dyn>,
    n: usize,
}

impl SpdSolver {
    /// Factor `a`. There is no fallback: a matrix that is not numerically
    /// positive definite is an error.
    pub(crate) fn factor(a: DMatrix<f64>, what: &str) -> Result<Self> {
        let n = a.nrows();
        match Cholesky::new(a) {
            Some(chol) => Ok(Self { chol, n }),
            None => Err(Error::Solver {
                message: format!("{what}: Cholesky factorization failed (not positive definite)"),
                condition: f64::INFINITY,
            }),
        }
    }

    pub(crate) fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Estimate of `1 / (||A||_1 ||A^{-1}||_1)` by Hager's method, with
    /// Higham's alternating-sign safeguard.
    pub(crate) fn rcond(&self, a: &DMatrix<f64>) -> f64 {
        let n = self.n;
        let norm_a = (0..n)
            .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        if norm_a == 0.0 {
            return 0.0;
        }
        let mut x = DVector::from_element(n, 1.0 / n as f64);
        let mut est = 0.0_f64;
        for _ in 0..5 {
            let y = self.solve(&x);
            est = y.iter().map(|v| v.abs()).sum();
            let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
            let z = self.solve(&xi);
            let (j, zmax) = z.iter().enumerate().map(|(i, v)| (i, v.abs())).fold(
                (0, f64::NEG_INFINITY),
                |acc, c| if c.1 > acc.1 { c } else { acc },
            );
            if zmax <= z.dot(&x) {
                break;
            }
            x = DVector::zeros(n);
            x[j] = 1.0;
        }
        let denom = (n.max(2) - 1) as f64;
        let b = DVector::from_fn(n, |i, _| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * (1.0 + i as f64 / denom)
        });
        let alt = 2.0 * self.solve(&b).iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
        est = est.max(alt);
        if !est.is_finite() {
            return 0.0;
        }
        1.0 / (norm_a * est)
    }
}

/// Factor `a + lambda I` (already added by the caller) and admit `lambda = 0`
/// only with a certified reciprocal condition number.
pub(crate) fn factor_regularized(a: DMatrix<f64>, lambda: f64, what: &str) -> Result<SpdSolver> {
    if lambda > 0.0 {
        return SpdSolver::factor(a, what);
    }
    let copy = a.clone();
    let solver = SpdSolver::factor(a, what)?;
    let rcond = solver.rcond(&copy);
    if !(rcond > MIN_RCOND) {
        return Err(Error::Solver {
            message: format!(
                "{what}: lambda = 0 requires reciprocal condition number > {MIN_RCOND:e}, got {rcond:e}"
            ),
            condition: 1.0 / rcond,
        });
    }
    Ok(solver)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rcond_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-3, 10.0]));
        let s = SpdSolver::factor(a.clone(), "test").unwrap();
        let r = s.rcond(&a);
        assert!((r - 1e-4).abs() < 1e-12, "{r}");
    }

    #[test]
    fn rcond_close_to_exact_on_hilbert() {
        let n = 6;
        let a = DMatrix::from_fn(n, n, |i, j| 1.0 / (i + j + 1) as f64);
        let s = SpdSolver::factor(a.clone(), "test").unwrap();
        let inv = a.clone().try_inverse().unwrap();
        let norm1 = |m: &DMatrix<f64>| {
            (0..n)
                .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let exact = 1.0 / (norm1(&a) * norm1(&inv));
        let r = s.rcond(&a);
        // The estimate never exceeds the truth and is typically within a
        // small factor of it.
        assert!(r >= exact * 0.999 && r < exact * 10.0, "{r} vs {exact}");
    }

    #[test]
    fn singular_rejected_without_regularization() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-15]);
        assert!(matches!(
            factor_regularized(a, 0.0, "test"),
            Err(Error::Solver { .. })
        ));
    }
}
