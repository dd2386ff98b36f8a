//! Small dense symmetric solves for the basis-regression systems.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("matrix is singular or not positive definite (pivot {pivot} at row {row})")]
pub struct SingularMatrix {
    pub row: usize,
    pub pivot: f64,
}

/// Relative pivot floor: a Cholesky pivot below `n·ε·max|diag|` is treated as zero.
fn pivot_floor(a: &DMatrix<f64>) -> f64 {
    let scale = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    (a.nrows() as f64) * f64::EPSILON * scale.max(f64::MIN_POSITIVE)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>, SingularMatrix> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
    let floor = pivot_floor(a);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > floor) {
            return Err(SingularMatrix {
                row: j,
                pivot: diag,
            });
        }
        let root = diag.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / root;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the Cholesky factor.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let y = forward_substitute(l, b);
    let n = l.nrows();
    let mut x = y;
    for i in (0..n).rev() {
        let mut v = x[i];
        for k in (i + 1)..n {
            v -= l[(k, i)] * x[k];
        }
        x[i] = v / l[(i, i)];
    }
    x
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn forward_substitute(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut v = y[i];
        for k in 0..i {
            v -= l[(i, k)] * y[k];
        }
        y[i] = v / l[(i, i)];
    }
    y
}

/// Solves `(A + ridge·I) x = b` for symmetric positive semidefinite `A`.
pub fn solve_ridge(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    ridge: f64,
) -> Result<DVector<f64>, SingularMatrix> {
    let mut reg = a.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += ridge;
    }
    let l = cholesky(&reg)?;
    Ok(cholesky_solve(&l, b))
}
