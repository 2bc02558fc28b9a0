//! Dense and block-tridiagonal linear algebra kernels.

mod block;
mod dense;
mod eigen;
mod matrix;

use thiserror::Error;

pub use block::{
    block_cholesky, block_cholesky_with_margin, selected_inverse, BlockCholesky,
    BlockTridiagonalSymmetric, SelectedInverse,
};
pub use dense::{
    cholesky_logdet, cholesky_with_floor, dense_cholesky, dense_spd_inverse,
    inverse_from_cholesky, lower_inverse, solve_lower, solve_lower_transpose,
    solve_right_lower_transpose,
};
pub use eigen::{max_eigenvalue, min_eigenpair, min_eigenvalue, spectral_norm, symmetric_eigen};
pub use matrix::{dot, norm2, Matrix};

/// Default relative pivot margin: a Cholesky pivot must exceed this times the
/// largest diagonal entry.
pub const DEFAULT_PD_MARGIN: f64 = 1e-12;

/// Relative tolerance for accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite (block {block:?}, pivot {pivot}, value {value:e})")]
    NotPositiveDefinite {
        block: Option<usize>,
        pivot: usize,
        value: f64,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no convergence after {iterations} iterations (best estimate {estimate})")]
    NonConvergence { iterations: usize, estimate: f64 },
    #[error("empty matrix")]
    Empty,
}

/// A Cholesky factor whose log-determinant can be read off its diagonal.
pub trait CholeskyFactor {
    /// `log det(L L^T)`.
    fn logdet(&self) -> f64;
}

impl CholeskyFactor for Matrix {
    fn logdet(&self) -> f64 {
        cholesky_logdet(self)
    }
}

impl CholeskyFactor for BlockCholesky {
    fn logdet(&self) -> f64 {
        BlockCholesky::logdet(self)
    }
}

/// `2 * sum(log(diag))` of a dense or blocked Cholesky factor.
pub fn logdet(factor: &impl CholeskyFactor) -> f64 {
    factor.logdet()
}
