//! Spectral quantities: power-iteration spectral norm and symmetric eigenvalues.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dense::check_symmetric;
use super::matrix::norm2;
use super::{LinalgError, Matrix};

const START_VECTOR_SEED: u64 = 0x5eed_0f_9a11;
const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_SWEEPS: usize = 10_000;

/// Largest singular value of `w` by power iteration on `W^T W`.
///
/// The start vector is drawn from a fixed seed, so results are reproducible.
/// Iteration stops once the estimate changes by at most `tol` relative; the cap is
/// `10 * max(rows, cols) + 100` iterations, after which `NonConvergence` carries the
/// best estimate.
pub fn spectral_norm(w: &Matrix, tol: f64) -> Result<f64, LinalgError> {
    assert!(tol > 0.0, "tolerance must be positive");
    if w.rows() == 0 || w.cols() == 0 {
        return Err(LinalgError::Empty);
    }
    if w.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let cap = 10 * w.rows().max(w.cols()) + 100;
    let mut rng = ChaCha8Rng::seed_from_u64(START_VECTOR_SEED);
    let mut v: Vec<f64> = (0..w.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut v);

    let mut estimate = 0.0;
    for _ in 0..cap {
        let u = w.mul_vec(&v);
        let next = norm2(&u);
        let mut g = w.tr_mul_vec(&u);
        if normalize(&mut g) == 0.0 {
            // v landed in the null space; W != 0 so restart along a coordinate axis.
            v = vec![0.0; w.cols()];
            v[argmax_col_norm(w)] = 1.0;
            continue;
        }
        v = g;
        let converged = (next - estimate).abs() <= tol * next;
        estimate = estimate.max(next);
        if converged {
            return Ok(estimate);
        }
    }
    Err(LinalgError::NonConvergence {
        iterations: cap,
        estimate,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Matrix) -> Result<f64, LinalgError> {
    Ok(min_eigenpair(a)?.0)
}

/// Smallest eigenvalue and a unit eigenvector.
pub fn min_eigenpair(a: &Matrix) -> Result<(f64, Vec<f64>), LinalgError> {
    let (values, vectors) = symmetric_eigen(a)?;
    Ok((values[0], vectors.into_iter().next().unwrap()))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(a: &Matrix) -> Result<f64, LinalgError> {
    let (values, _) = symmetric_eigen(a)?;
    Ok(*values.last().unwrap())
}

/// Eigenvalues in ascending order with the matching unit eigenvectors.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Vec<Vec<f64>>), LinalgError> {
    check_symmetric(a)?;
    let n = a.rows();
    if n == 0 {
        return Err(LinalgError::Empty);
    }
    let m = DMatrix::from_row_slice(n, n, a.as_slice());
    let eig = SymmetricEigen::try_new(m, EIGEN_EPS, EIGEN_MAX_SWEEPS).ok_or(
        LinalgError::NonConvergence {
            iterations: EIGEN_MAX_SWEEPS,
            estimate: f64::NAN,
        },
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    Ok((values, vectors))
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn argmax_col_norm(w: &Matrix) -> usize {
    (0..w.cols())
        .map(|j| (0..w.rows()).map(|i| w[(i, j)].powi(2)).sum::<f64>())
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0, |(j, _)| j)
}
