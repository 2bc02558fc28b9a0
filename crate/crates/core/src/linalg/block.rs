//! Symmetric block-tridiagonal matrices: blocked Cholesky and selected inversion.
//!
//! Blocks are indexed `0..=p`. `sub_blocks[i]` is the block at position `(i+1, i)`;
//! the block at `(i, i+1)` is its transpose and is never stored.
//!
//! For `M = L L^T` with `L` block lower bidiagonal (diagonal blocks `D_i`,
//! subdiagonal blocks `R_i`):
//!
//! ```text
//! D_0     = chol(A_0)
//! R_i     = B_i D_i^{-T}
//! D_{i+1} = chol(A_{i+1} - R_i R_i^T)
//! ```
//!
//! and the block-tridiagonal part of `M^{-1}` follows backwards from the last block:
//!
//! ```text
//! S_p = (D_p D_p^T)^{-1}
//! K_i = -S_{i+1} R_i D_i^{-1}
//! S_i = (D_i D_i^T)^{-1} - K_i^T R_i D_i^{-1}
//! ```

use serde::{Deserialize, Serialize};

use super::dense::{cholesky_logdet, cholesky_with_floor, lower_inverse, solve_right_lower_transpose};
use super::{LinalgError, Matrix, DEFAULT_PD_MARGIN, SYMMETRY_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTridiagonalSymmetric {
    block_sizes: Vec<usize>,
    diag_blocks: Vec<Matrix>,
    sub_blocks: Vec<Matrix>,
}

impl BlockTridiagonalSymmetric {
    pub fn new(diag_blocks: Vec<Matrix>, sub_blocks: Vec<Matrix>) -> Result<Self, LinalgError> {
        if diag_blocks.is_empty() {
            return Err(LinalgError::Empty);
        }
        if sub_blocks.len() + 1 != diag_blocks.len() {
            return Err(LinalgError::ShapeMismatch(format!(
                "{} diagonal blocks need {} sub blocks, got {}",
                diag_blocks.len(),
                diag_blocks.len() - 1,
                sub_blocks.len()
            )));
        }
        let mut block_sizes = Vec::with_capacity(diag_blocks.len());
        for (i, d) in diag_blocks.iter().enumerate() {
            if !d.is_square() {
                return Err(LinalgError::ShapeMismatch(format!(
                    "diagonal block {i} is {}x{}",
                    d.rows(),
                    d.cols()
                )));
            }
            if !d.is_symmetric(SYMMETRY_TOL) {
                return Err(LinalgError::NotSymmetric);
            }
            block_sizes.push(d.rows());
        }
        for (i, s) in sub_blocks.iter().enumerate() {
            if s.shape() != (block_sizes[i + 1], block_sizes[i]) {
                return Err(LinalgError::ShapeMismatch(format!(
                    "sub block {i} is {}x{}, expected {}x{}",
                    s.rows(),
                    s.cols(),
                    block_sizes[i + 1],
                    block_sizes[i]
                )));
            }
        }
        Ok(Self {
            block_sizes,
            diag_blocks,
            sub_blocks,
        })
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn num_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn dim(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    pub fn diag_block(&self, i: usize) -> &Matrix {
        &self.diag_blocks[i]
    }

    pub fn sub_block(&self, i: usize) -> &Matrix {
        &self.sub_blocks[i]
    }

    pub fn diag_blocks(&self) -> &[Matrix] {
        &self.diag_blocks
    }

    pub fn sub_blocks(&self) -> &[Matrix] {
        &self.sub_blocks
    }

    /// Offsets of each block in the assembled matrix.
    pub fn offsets(&self) -> Vec<usize> {
        offsets(&self.block_sizes)
    }

    pub fn max_diagonal(&self) -> f64 {
        self.diag_blocks
            .iter()
            .flat_map(|b| b.diagonal())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Matrix {
        let off = self.offsets();
        let mut m = Matrix::zeros(self.dim(), self.dim());
        for (i, d) in self.diag_blocks.iter().enumerate() {
            m.set_block(off[i], off[i], d);
        }
        for (i, s) in self.sub_blocks.iter().enumerate() {
            m.set_block(off[i + 1], off[i], s);
            m.set_block(off[i], off[i + 1], &s.transpose());
        }
        m
    }
}

/// Blocks of the lower bidiagonal Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCholesky {
    block_sizes: Vec<usize>,
    d: Vec<Matrix>,
    r: Vec<Matrix>,
}

impl BlockCholesky {
    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Diagonal factor blocks `D_i`.
    pub fn diag_factors(&self) -> &[Matrix] {
        &self.d
    }

    /// Subdiagonal factor blocks `R_i` (position `(i+1, i)`).
    pub fn sub_factors(&self) -> &[Matrix] {
        &self.r
    }

    pub fn logdet(&self) -> f64 {
        self.d.iter().map(cholesky_logdet).sum()
    }

    /// The full lower-triangular factor.
    pub fn to_dense(&self) -> Matrix {
        let off = offsets(&self.block_sizes);
        let n: usize = self.block_sizes.iter().sum();
        let mut l = Matrix::zeros(n, n);
        for (i, d) in self.d.iter().enumerate() {
            l.set_block(off[i], off[i], d);
        }
        for (i, r) in self.r.iter().enumerate() {
            l.set_block(off[i + 1], off[i], r);
        }
        l
    }
}

/// Diagonal blocks `S_i` and subdiagonal blocks `K_i` of `M^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedInverse {
    pub s: Vec<Matrix>,
    pub k: Vec<Matrix>,
}

/// Blocked Cholesky with the default pivot margin.
pub fn block_cholesky(m: &BlockTridiagonalSymmetric) -> Result<BlockCholesky, LinalgError> {
    block_cholesky_with_margin(m, DEFAULT_PD_MARGIN)
}

/// Blocked Cholesky accepting pivots strictly greater than `margin * max_i M_ii`.
///
/// The pivots met here are exactly those of a dense Cholesky of the assembled
/// matrix, so the verdict matches the dense factorization.
pub fn block_cholesky_with_margin(
    m: &BlockTridiagonalSymmetric,
    margin: f64,
) -> Result<BlockCholesky, LinalgError> {
    let floor = margin * m.max_diagonal();
    let p = m.num_blocks();
    let mut d = Vec::with_capacity(p);
    let mut r = Vec::with_capacity(p - 1);

    let tag = |i: usize| {
        move |e: LinalgError| match e {
            LinalgError::NotPositiveDefinite { pivot, value, .. } => {
                LinalgError::NotPositiveDefinite {
                    block: Some(i),
                    pivot,
                    value,
                }
            }
            other => other,
        }
    };

    d.push(cholesky_with_floor(m.diag_block(0), floor).map_err(tag(0))?);
    for i in 0..p - 1 {
        let ri = solve_right_lower_transpose(&d[i], m.sub_block(i));
        let schur = m.diag_block(i + 1).sub(&ri.matmul_t(&ri));
        d.push(cholesky_with_floor(&schur, floor).map_err(tag(i + 1))?);
        r.push(ri);
    }
    Ok(BlockCholesky {
        block_sizes: m.block_sizes().to_vec(),
        d,
        r,
    })
}

/// Block-tridiagonal part of `M^{-1}` from its blocked Cholesky factor.
pub fn selected_inverse(c: &BlockCholesky) -> SelectedInverse {
    let p = c.d.len();
    let dinv: Vec<Matrix> = c.d.iter().map(lower_inverse).collect();
    let mut s: Vec<Matrix> = vec![Matrix::zeros(0, 0); p];
    let mut k: Vec<Matrix> = vec![Matrix::zeros(0, 0); p - 1];

    s[p - 1] = gram(&dinv[p - 1]);
    for i in (0..p - 1).rev() {
        let rd = c.r[i].matmul(&dinv[i]);
        let ki = s[i + 1].matmul(&rd).scale(-1.0);
        let mut si = gram(&dinv[i]).sub(&ki.t_matmul(&rd));
        si.symmetrize();
        s[i] = si;
        k[i] = ki;
    }
    SelectedInverse { s, k }
}

/// `X^T X`, exactly symmetric.
fn gram(x: &Matrix) -> Matrix {
    let mut g = x.t_matmul(x);
    g.symmetrize();
    g
}

pub(crate) fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for &s in sizes {
        off.push(acc);
        acc += s;
    }
    off
}
