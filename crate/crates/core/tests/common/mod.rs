//! Independent reference implementations used as test oracles. Nothing here calls the
//! library's numerical routines.
#![allow(dead_code)]

use lipbarrier::linalg::Matrix;
use lipbarrier::lipschitz::Multipliers;
use lipbarrier::nn::{Activation, MlpParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn to_dense(m: &Matrix) -> Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn rel_err(a: &Dense, b: &Dense) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    num.sqrt() / den.sqrt().max(1e-300)
}

/// Textbook Cholesky-Banachiewicz; `None` when a pivot is not positive.
pub fn naive_cholesky(a: &Dense) -> Option<Dense> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

pub fn naive_logdet(a: &Dense) -> Option<f64> {
    naive_cholesky(a).map(|l| (0..l.len()).map(|i| 2.0 * l[i][i].ln()).sum())
}

/// Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| m[x][c].abs().partial_cmp(&m[y][c].abs()).unwrap())
            .unwrap();
        m.swap(c, p);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn sub_block(a: &Dense, r0: usize, c0: usize, nr: usize, nc: usize) -> Dense {
    (r0..r0 + nr).map(|i| a[i][c0..c0 + nc].to_vec()).collect()
}

/// Certificate matrix written out entry by entry:
/// block rows (input, hidden 1..l, output), diagonal `L^2 I, 2 Lambda_i, I`,
/// couplings `-Lambda_i W_{i-1}` and `-W_l`.
pub fn literal_cert_matrix(weights: &[Dense], lambdas: &[Vec<f64>], l_target: f64) -> Dense {
    let mut sizes = vec![weights[0][0].len()];
    sizes.extend(weights.iter().map(|w| w.len()));
    let offs: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let n: usize = sizes.iter().sum();
    let last = sizes.len() - 1;
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..sizes[0] {
        m[i][i] = l_target * l_target;
    }
    for h in 1..last {
        for i in 0..sizes[h] {
            m[offs[h] + i][offs[h] + i] = 2.0 * lambdas[h - 1][i];
        }
    }
    for i in 0..sizes[last] {
        m[offs[last] + i][offs[last] + i] = 1.0;
    }
    for (b, w) in weights.iter().enumerate() {
        let scale = |r: usize| if b + 1 < last { lambdas[b][r] } else { 1.0 };
        for r in 0..w.len() {
            for c in 0..w[r].len() {
                let v = -scale(r) * w[r][c];
                m[offs[b + 1] + r][offs[b] + c] = v;
                m[offs[b] + c][offs[b + 1] + r] = v;
            }
        }
    }
    m
}

pub fn weights_of(p: &MlpParams) -> Vec<Dense> {
    p.weights.iter().map(to_dense).collect()
}

pub fn act(kind: Activation, v: f64) -> f64 {
    match kind {
        Activation::Tanh => v.tanh(),
        Activation::Relu => v.max(0.0),
        Activation::LeakyRelu { slope } => {
            if v >= 0.0 {
                v
            } else {
                slope * v
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
    }
}

/// Straight-line evaluation of `W_l phi(... phi(W_0 x + b_0) ...) + b_l`.
pub fn reference_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let n = p.weights.len();
    for k in 0..n {
        let w = &p.weights[k];
        let mut z = vec![0.0; w.rows()];
        for r in 0..w.rows() {
            let mut s = p.biases[k][r];
            for c in 0..w.cols() {
                s += w[(r, c)] * h[c];
            }
            z[r] = if k + 1 < n { act(p.activation, s) } else { s };
        }
        h = z;
    }
    h
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn random_dims(rng: &mut ChaCha8Rng, max_hidden: usize, max_width: usize) -> Vec<usize> {
    let l = rng.random_range(1..=max_hidden);
    (0..l + 2).map(|_| rng.random_range(1..=max_width)).collect()
}

/// Gaussian-ish random network with entries scaled by `1/sqrt(fan_in)`.
pub fn random_net(rng: &mut ChaCha8Rng, dims: &[usize], activation: Activation) -> MlpParams {
    let weights = dims
        .windows(2)
        .map(|w| {
            let s = 1.0 / (w[0] as f64).sqrt();
            Matrix::from_fn(w[1], w[0], |_, _| s * rng.random_range(-1.7..1.7))
        })
        .collect();
    let biases = dims[1..]
        .iter()
        .map(|&n| (0..n).map(|_| rng.random_range(-0.5..0.5)).collect())
        .collect();
    MlpParams::from_layers(weights, biases, activation).unwrap()
}

pub fn random_multipliers(rng: &mut ChaCha8Rng, p: &MlpParams) -> Multipliers {
    Multipliers {
        lambdas: p
            .hidden_dims()
            .iter()
            .map(|&n| (0..n).map(|_| rng.random_range(0.3..3.0)).collect())
            .collect(),
    }
}

/// Shrinks the weights until the literal certificate matrix is positive definite with a
/// comfortable pivot floor, judged by [`naive_cholesky`].
pub fn make_feasible(p: &MlpParams, m: &Multipliers, l_target: f64) -> MlpParams {
    let mut q = p.clone();
    for _ in 0..400 {
        let mat = literal_cert_matrix(&weights_of(&q), &m.lambdas, l_target);
        let floor = 1e-3 * mat.iter().enumerate().map(|(i, r)| r[i]).fold(0.0, f64::max);
        if let Some(l) = naive_cholesky(&mat) {
            if (0..l.len()).all(|i| l[i][i] * l[i][i] > floor) {
                return q;
            }
        }
        q = q.with_scaled_weights(0.8);
    }
    panic!("could not make network feasible");
}

pub fn random_point(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}
