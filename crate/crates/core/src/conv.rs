//! Single-channel circular 2D convolution and its doubly block circulant matrix.
//!
//! Images are vectorized row-major: `vec(X)[k * m + l] = X[k][l]` for an `n x m` input.

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConvError {
    #[error("filter {filter:?} larger than input {input:?}")]
    FilterTooLarge {
        filter: (usize, usize),
        input: (usize, usize),
    },
    #[error("input must be nonempty")]
    EmptyInput,
}

/// A filter zero-padded to the input shape it acts on.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilter {
    kernel: Matrix,
}

impl ConvFilter {
    pub fn new(kernel: &Matrix, input_shape: (usize, usize)) -> Result<Self, ConvError> {
        let (n, m) = input_shape;
        if n == 0 || m == 0 {
            return Err(ConvError::EmptyInput);
        }
        if kernel.rows() > n || kernel.cols() > m {
            return Err(ConvError::FilterTooLarge {
                filter: kernel.shape(),
                input: input_shape,
            });
        }
        let mut padded = Matrix::zeros(n, m);
        padded.set_block(0, 0, kernel);
        Ok(Self { kernel: padded })
    }

    /// The padded `n x m` filter.
    pub fn kernel(&self) -> &Matrix {
        &self.kernel
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.kernel.shape()
    }
}

/// `m x m` matrix whose row `r` is `row` cyclically shifted right by `r`.
pub fn circulant(row: &[f64]) -> Matrix {
    let m = row.len();
    assert!(m >= 1, "circulant of an empty row");
    Matrix::from_fn(m, m, |r, c| row[(c + m - r) % m])
}

/// The `nm x nm` matrix `D` with `vec(conv2d_circular(K, X)) = D vec(X)`.
///
/// Block `(i, j)` is `circulant(K[(j - i) mod n])`.
pub fn doubly_block_circulant(f: &ConvFilter) -> Matrix {
    let (n, m) = f.input_shape();
    let blocks: Vec<Matrix> = (0..n).map(|i| circulant(f.kernel.row(i))).collect();
    let mut d = Matrix::zeros(n * m, n * m);
    for bi in 0..n {
        for bj in 0..n {
            d.set_block(bi * m, bj * m, &blocks[(bj + n - bi) % n]);
        }
    }
    d
}

/// `Y[k][l] = sum_{i,j} K[i][j] X[(k + i) mod n][(l + j) mod m]`.
pub fn conv2d_circular(k: &Matrix, x: &Matrix) -> Result<Matrix, ConvError> {
    let (n, m) = x.shape();
    if n == 0 || m == 0 {
        return Err(ConvError::EmptyInput);
    }
    if k.rows() > n || k.cols() > m {
        return Err(ConvError::FilterTooLarge {
            filter: k.shape(),
            input: (n, m),
        });
    }
    Ok(Matrix::from_fn(n, m, |r, c| {
        let mut acc = 0.0;
        for i in 0..k.rows() {
            for j in 0..k.cols() {
                acc += k[(i, j)] * x[((r + i) % n, (c + j) % m)];
            }
        }
        acc
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circulant_examples() {
        assert_eq!(circulant(&[1.0, 0.0, 0.0]), Matrix::identity(3));
        assert_eq!(
            circulant(&[0.0, 1.0, 0.0]),
            Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]])
        );
        assert_eq!(
            circulant(&[1.0, 2.0, 3.0]),
            Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0], vec![2.0, 3.0, 1.0]])
        );
    }

    #[test]
    fn delta_filter_is_identity() {
        let f = ConvFilter::new(&Matrix::from_rows(&[vec![1.0]]), (3, 4)).unwrap();
        assert_eq!(doubly_block_circulant(&f), Matrix::identity(12));
        let x = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        assert_eq!(conv2d_circular(f.kernel(), &x).unwrap(), x);
    }

    #[test]
    fn row_shift_filter_is_block_permutation() {
        let mut k = Matrix::zeros(2, 1);
        k[(1, 0)] = 1.0;
        let d = doubly_block_circulant(&ConvFilter::new(&k, (3, 3)).unwrap());
        for r in 0..9 {
            let ones: Vec<usize> = (0..9).filter(|&c| d[(r, c)] == 1.0).collect();
            assert_eq!(ones, vec![(r + 3) % 9]);
        }
    }

    #[test]
    fn constant_input_sums_taps() {
        let k = Matrix::from_fn(2, 3, |_, _| 1.0);
        let x = Matrix::from_fn(4, 4, |_, _| 2.5);
        let y = conv2d_circular(&k, &x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 15.0));
    }

    #[test]
    fn oversized_filter_rejected() {
        assert!(matches!(
            ConvFilter::new(&Matrix::zeros(3, 1), (2, 2)),
            Err(ConvError::FilterTooLarge { .. })
        ));
    }
}
