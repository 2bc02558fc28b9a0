//! Dense Cholesky and friends.
//!
//! These are the reference twins of the blocked routines in [`super::block`]:
//! the blocked path must agree with them, and the benchmark times both.

use super::{LinalgError, Matrix, DEFAULT_PD_MARGIN, SYMMETRY_TOL};

/// Cholesky factor `L` (lower triangular, positive diagonal) with `L L^T = A`.
///
/// A pivot is accepted only if it exceeds `DEFAULT_PD_MARGIN * max_i A_ii`.
pub fn dense_cholesky(a: &Matrix) -> Result<Matrix, LinalgError> {
    check_symmetric(a)?;
    let floor = DEFAULT_PD_MARGIN * max_diagonal(a);
    cholesky_with_floor(a, floor)
}

/// Cholesky factorization accepting pivots strictly greater than `floor`.
///
/// Only the lower triangle of `a` is read.
pub fn cholesky_with_floor(a: &Matrix, floor: f64) -> Result<Matrix, LinalgError> {
    let n = a.rows();
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj = l.row(j);
        let pivot = a[(j, j)] - lj[..j].iter().map(|v| v * v).sum::<f64>();
        if !(pivot > floor) || !pivot.is_finite() {
            return Err(LinalgError::NotPositiveDefinite {
                block: None,
                pivot: j,
                value: pivot,
            });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let (head, tail) = l.as_mut_slice().split_at_mut(i * n);
            let lj = &head[j * n..j * n + j];
            let li = &mut tail[..n];
            let s: f64 = li[..j].iter().zip(lj).map(|(x, y)| x * y).sum();
            li[j] = (a[(i, j)] - s) / d;
        }
    }
    Ok(l)
}

/// `2 * sum(log(diag(L)))`, the log-determinant of `L L^T`.
pub fn cholesky_logdet(l: &Matrix) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
pub fn lower_inverse(l: &Matrix) -> Matrix {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    // Column j of L^{-1} by forward substitution on e_j; entries above j stay zero.
    for j in 0..n {
        inv[(j, j)] = 1.0 / l[(j, j)];
        for i in (j + 1)..n {
            let li = l.row(i);
            let mut s = 0.0;
            for (k, &lik) in li.iter().enumerate().take(i).skip(j) {
                s += lik * inv[(k, j)];
            }
            inv[(i, j)] = -s / l[(i, i)];
        }
    }
    inv
}

/// Solves `X L^T = B` for `X`, i.e. `X = B L^{-T}`, row by row.
pub fn solve_right_lower_transpose(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    assert_eq!(b.cols(), n, "solve shape mismatch");
    let mut x = b.clone();
    for r in 0..b.rows() {
        let row = x.row_mut(r);
        // L row_r^T = b_r^T, forward substitution.
        for i in 0..n {
            let li = l.row(i);
            let s: f64 = li[..i].iter().zip(&row[..i]).map(|(a, c)| a * c).sum();
            row[i] = (row[i] - s) / li[i];
        }
    }
    x
}

/// Solves `L y = b` by forward substitution.
pub fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let li = l.row(i);
        let s: f64 = li[..i].iter().zip(&y[..i]).map(|(a, c)| a * c).sum();
        y[i] = (y[i] - s) / li[i];
    }
    y
}

/// Solves `L^T x = b` by backward substitution.
pub fn solve_lower_transpose(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// `(L L^T)^{-1} = L^{-T} L^{-1}`, returned exactly symmetric.
pub fn inverse_from_cholesky(l: &Matrix) -> Matrix {
    let linv = lower_inverse(l);
    let mut inv = linv.t_matmul(&linv);
    inv.symmetrize();
    inv
}

/// Full inverse of a symmetric positive definite matrix via dense Cholesky.
pub fn dense_spd_inverse(a: &Matrix) -> Result<Matrix, LinalgError> {
    Ok(inverse_from_cholesky(&dense_cholesky(a)?))
}

pub(crate) fn max_diagonal(a: &Matrix) -> f64 {
    a.diagonal().into_iter().fold(0.0, f64::max)
}

pub(crate) fn check_symmetric(a: &Matrix) -> Result<(), LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(LinalgError::NotSymmetric);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factor_is_identity() {
        let l = dense_cholesky(&Matrix::identity(3)).unwrap();
        assert_eq!(l, Matrix::identity(3));
    }

    #[test]
    fn two_by_two_factor() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let l = dense_cholesky(&a).unwrap();
        let expected = Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 2f64.sqrt()]]);
        assert!(l.rel_diff(&expected) < 1e-15);
        assert!(l.matmul_t(&l).rel_diff(&a) < 1e-15);
    }

    #[test]
    fn indefinite_reports_failing_pivot() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        match dense_cholesky(&a) {
            Err(LinalgError::NotPositiveDefinite { pivot, value, .. }) => {
                assert_eq!(pivot, 1);
                assert!((value + 3.0).abs() < 1e-12);
            }
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_input_rejected() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]);
        assert_eq!(dense_cholesky(&a), Err(LinalgError::NotSymmetric));
    }

    #[test]
    fn logdet_of_diagonal() {
        let l = dense_cholesky(&Matrix::from_diag(&[4.0, 4.0])).unwrap();
        assert!((cholesky_logdet(&l) - 2.0 * 4f64.ln()).abs() < 1e-15);
        assert_eq!(cholesky_logdet(&Matrix::identity(5)), 0.0);
    }

    #[test]
    fn triangular_helpers_are_consistent() {
        let a = Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -0.2],
            vec![0.5, -0.2, 2.0],
        ]);
        let l = dense_cholesky(&a).unwrap();
        let linv = lower_inverse(&l);
        assert!(l.matmul(&linv).rel_diff(&Matrix::identity(3)) < 1e-14);

        let b = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 0.5]]);
        let x = solve_right_lower_transpose(&l, &b);
        assert!(x.matmul_t(&l).rel_diff(&b) < 1e-14);

        let inv = inverse_from_cholesky(&l);
        assert!(inv.matmul(&a).rel_diff(&Matrix::identity(3)) < 1e-14);

        let rhs = [1.0, -2.0, 0.25];
        let y = solve_lower_transpose(&l, &solve_lower(&l, &rhs));
        let back = a.mul_vec(&y);
        for (u, v) in back.iter().zip(rhs) {
            assert!((u - v).abs() < 1e-13);
        }
    }
}
