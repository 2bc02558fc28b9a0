//! Post-hoc certificates: general incremental quadratic constraints and Lipschitz
//! upper bounds by bisection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    block_cholesky_with_margin, min_eigenpair, min_eigenvalue, spectral_norm, LinalgError,
    Matrix,
};
use crate::lipschitz::{
    assemble_cert_matrix, bound_at_multipliers, LipschitzTarget, Multipliers, LAMBDA_FLOOR,
};
use crate::nn::MlpParams;

/// Relative tolerance used for spectral norms in the bisection bracket.
const NORM_TOL: f64 = 1e-12;
const ASCENT_ITERS: usize = 500;
const ASCENT_PATIENCE: usize = 50;
const SCALAR_LOG_RANGE: (f64, f64) = (-6.0 * std::f64::consts::LN_10, 6.0 * std::f64::consts::LN_10);
const GOLDEN_TOL: f64 = 1e-3;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Incremental quadratic constraint
/// `[dx; dy]^T [[Q, S], [S^T, R]] [dx; dy] >= 0` together with the activation slope bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct QcSpec {
    pub q: Matrix,
    pub s: Matrix,
    pub r: Matrix,
    pub slope: (f64, f64),
}

impl QcSpec {
    /// `Q = L^2 I`, `S = 0`, `R = -I`: the constraint `||dy|| <= L ||dx||`.
    pub fn lipschitz(n_in: usize, n_out: usize, l: f64, slope: (f64, f64)) -> Self {
        Self {
            q: Matrix::scaled_identity(n_in, l * l),
            s: Matrix::zeros(n_in, n_out),
            r: Matrix::scaled_identity(n_out, -1.0),
            slope,
        }
    }

    /// Value of the quadratic form at a pair of differences.
    pub fn form(&self, dx: &[f64], dy: &[f64]) -> f64 {
        let qx = self.q.mul_vec(dx);
        let sy = self.s.mul_vec(dy);
        let ry = self.r.mul_vec(dy);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        dot(dx, &qx) + 2.0 * dot(dx, &sy) + dot(dy, &ry)
    }

    fn check(&self, p: &MlpParams) -> Result<(), CertifyError> {
        let (n0, nl) = (p.input_dim(), p.output_dim());
        if self.q.shape() != (n0, n0) || self.s.shape() != (n0, nl) || self.r.shape() != (nl, nl) {
            return Err(CertifyError::ShapeMismatch(format!(
                "Q {:?}, S {:?}, R {:?} for network {n0} -> {nl}",
                self.q.shape(),
                self.s.shape(),
                self.r.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Certified,
    NotCertified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertMode {
    FullDiag,
    ScalarLambda,
    Split,
}

impl fmt::Display for CertMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertMode::FullDiag => "full_diag",
            CertMode::ScalarLambda => "scalar_lambda",
            CertMode::Split => "split",
        })
    }
}

impl FromStr for CertMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full_diag" | "full" => Ok(CertMode::FullDiag),
            "scalar_lambda" | "scalar" => Ok(CertMode::ScalarLambda),
            "split" => Ok(CertMode::Split),
            other => Err(format!(
                "unknown certification mode `{other}` (expected full_diag, scalar_lambda or split)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertResult {
    pub verdict: Verdict,
    pub multipliers_used: Multipliers,
    pub min_eig: f64,
    pub mode: CertMode,
}

impl CertResult {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

/// The matrix whose positive semidefiniteness certifies `qc` for the network, in the
/// variables `(dx, dw^1, ..., dw^l)`.
pub fn assemble_qc_matrix(
    p: &MlpParams,
    qc: &QcSpec,
    m: &Multipliers,
) -> Result<Matrix, CertifyError> {
    p.validate()
        .map_err(|e| CertifyError::ShapeMismatch(e.to_string()))?;
    qc.check(p)?;
    m.check(p)
        .map_err(|e| CertifyError::ShapeMismatch(e.to_string()))?;

    let l = p.num_hidden();
    let mut sizes = vec![p.input_dim()];
    sizes.extend_from_slice(p.hidden_dims());
    let mut off = vec![0; sizes.len() + 1];
    for i in 0..sizes.len() {
        off[i + 1] = off[i] + sizes[i];
    }
    let n = off[sizes.len()];
    let mut out = Matrix::zeros(n, n);
    let add_block = |out: &mut Matrix, bi: usize, bj: usize, b: &Matrix| {
        for r in 0..b.rows() {
            for c in 0..b.cols() {
                out[(off[bi] + r, off[bj] + c)] += b[(r, c)];
            }
        }
    };

    // Performance part: dx^T Q dx + 2 dx^T S W_l dw^l + dw^l^T W_l^T R W_l dw^l.
    add_block(&mut out, 0, 0, &qc.q);
    let wl = &p.weights[l];
    if l == 0 {
        let sw = qc.s.matmul(wl);
        add_block(&mut out, 0, 0, &sw);
        add_block(&mut out, 0, 0, &sw.transpose());
        add_block(&mut out, 0, 0, &wl.t_matmul(&qc.r.matmul(wl)));
    } else {
        let sw = qc.s.matmul(wl);
        add_block(&mut out, 0, l, &sw);
        add_block(&mut out, l, 0, &sw.transpose());
        add_block(&mut out, l, l, &wl.t_matmul(&qc.r.matmul(wl)));
    }

    // Slope part per hidden layer i, with dv^i = W_{i-1} dw^{i-1} and dw^0 = dx:
    // [dv; dw]^T [[2ab Lam, -(a+b) Lam], [-(a+b) Lam, 2 Lam]] [dv; dw].
    let (a, b) = qc.slope;
    for i in 1..=l {
        let lam = &m.lambdas[i - 1];
        let w = &p.weights[i - 1];
        let lw = w.scale_rows(lam);
        add_block(&mut out, i - 1, i - 1, &w.t_matmul(&lw).scale(2.0 * a * b));
        let cross = lw.scale(-(a + b));
        add_block(&mut out, i, i - 1, &cross);
        add_block(&mut out, i - 1, i, &cross.transpose());
        add_block(
            &mut out,
            i,
            i,
            &Matrix::from_diag(&lam.iter().map(|v| 2.0 * v).collect::<Vec<_>>()),
        );
    }
    out.symmetrize();
    Ok(out)
}

/// Certified iff the smallest eigenvalue of [`assemble_qc_matrix`] is at least `-slack`.
pub fn check_qc(
    p: &MlpParams,
    qc: &QcSpec,
    m: &Multipliers,
    slack: f64,
) -> Result<CertResult, CertifyError> {
    let mat = assemble_qc_matrix(p, qc, m)?;
    let min_eig = min_eigenvalue(&mat)?;
    let flat = m.to_flat();
    let scalar = flat.windows(2).all(|w| w[0] == w[1]);
    Ok(CertResult {
        verdict: if min_eig >= -slack {
            Verdict::Certified
        } else {
            Verdict::NotCertified
        },
        multipliers_used: m.clone(),
        min_eig,
        mode: if scalar {
            CertMode::ScalarLambda
        } else {
            CertMode::FullDiag
        },
    })
}

/// `beta^l * prod_i ||W_i||_2`, with `beta` the upper slope of the activation.
pub fn norm_product_bound(p: &MlpParams) -> f64 {
    let beta = p.activation.slope_range().1;
    let norms: f64 = p
        .weights
        .iter()
        .map(|w| match spectral_norm(w, NORM_TOL) {
            Ok(s) => s,
            Err(_) => w.frobenius_norm(),
        })
        .product();
    beta.powi(p.num_hidden() as i32) * norms
}

/// An upper bound together with the best multipliers found.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    pub bound: f64,
    /// Certify `bound` up to a factor `1 + tol`, except where a norm-product fallback
    /// (in split mode, per part) determined the bound.
    pub multipliers: Multipliers,
    pub mode: CertMode,
}

/// Smallest certified Lipschitz bound found by bisection, within relative tolerance `tol`.
pub fn estimate_lipschitz(p: &MlpParams, mode: CertMode, tol: f64) -> f64 {
    estimate_lipschitz_with(p, mode, tol, None).bound
}

/// As [`estimate_lipschitz`], starting the multiplier search from `warm` when given.
///
/// The bound is always valid: if no certificate is found the norm product is returned.
pub fn estimate_lipschitz_with(
    p: &MlpParams,
    mode: CertMode,
    tol: f64,
    warm: Option<&Multipliers>,
) -> LipschitzEstimate {
    assert!(tol > 0.0, "tolerance must be positive");
    match mode {
        CertMode::ScalarLambda => scalar_estimate(p, tol),
        CertMode::FullDiag => full_diag_estimate(p, tol, warm),
        CertMode::Split => split_estimate(p, tol),
    }
}

fn estimate(bound: f64, multipliers: Multipliers, mode: CertMode) -> LipschitzEstimate {
    LipschitzEstimate {
        bound,
        multipliers,
        mode,
    }
}

fn slope_is_sector(p: &MlpParams) -> bool {
    // The certificate matrix is written for slopes in [0, 1].
    let (a, b) = p.activation.slope_range();
    a >= 0.0 && b <= 1.0
}

fn cert_min_eigpair(p: &MlpParams, m: &Multipliers, l: f64) -> (f64, Vec<f64>) {
    let cert = assemble_cert_matrix(p, m, LipschitzTarget::new(l).unwrap()).unwrap();
    min_eigenpair(&cert.to_dense()).unwrap_or((f64::NEG_INFINITY, Vec::new()))
}

fn strictly_feasible(p: &MlpParams, m: &Multipliers, l: f64) -> bool {
    let cert = assemble_cert_matrix(p, m, LipschitzTarget::new(l).unwrap()).unwrap();
    block_cholesky_with_margin(&cert, 0.0).is_ok()
}

fn exact_bound(p: &MlpParams, m: &Multipliers) -> f64 {
    bound_at_multipliers(p, m).unwrap_or(f64::INFINITY)
}

/// Shared bisection over `L` in `[0, hi]`. `probe(L, best)` tries to certify `L`,
/// updating `best` on success.
fn bisect(
    p: &MlpParams,
    tol: f64,
    mut best: Multipliers,
    mut probe: impl FnMut(f64, &mut Multipliers) -> bool,
) -> (f64, Multipliers) {
    let ceiling = norm_product_bound(p);
    if ceiling == 0.0 {
        return (0.0, best);
    }
    let mut hi = ceiling.min(exact_bound(p, &best));
    if !hi.is_finite() || !probe(hi, &mut best) {
        // The norm product is a bound regardless; the certificate may only reach it in
        // the limit, so probe slightly above it for multipliers.
        hi = ceiling;
        if !probe(hi, &mut best) {
            probe(ceiling * (1.0 + tol), &mut best);
            return (ceiling, best);
        }
    }
    hi = hi.min(exact_bound(p, &best));
    let mut lo = 0.0;
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= tol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 {
            break;
        }
        if probe(mid, &mut best) {
            hi = mid.min(exact_bound(p, &best));
        } else {
            lo = mid;
        }
    }
    (hi.min(exact_bound(p, &best)), best)
}

/// Golden-section search of `f` (unimodal, to be maximized) on `[a, b]`.
fn golden_max(mut a: f64, mut b: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn scalar_estimate(p: &MlpParams, tol: f64) -> LipschitzEstimate {
    let hidden = p.hidden_dims().to_vec();
    if !slope_is_sector(p) {
        return estimate(norm_product_bound(p), Multipliers::uniform(&hidden, 1.0), CertMode::ScalarLambda);
    }
    let start = Multipliers::uniform(&hidden, 1.0);
    let (bound, m) = bisect(p, tol, start, |l, best| {
        let (t, val) = golden_max(SCALAR_LOG_RANGE.0, SCALAR_LOG_RANGE.1, GOLDEN_TOL, |t| {
            cert_min_eigpair(p, &Multipliers::uniform(&hidden, t.exp()), l).0
        });
        let cand = Multipliers::uniform(&hidden, t.exp());
        if val >= 0.0 || strictly_feasible(p, &cand, l) {
            if exact_bound(p, &cand) <= exact_bound(p, best) {
                *best = cand;
            }
            true
        } else {
            false
        }
    });
    estimate(bound, m, CertMode::ScalarLambda)
}

/// Projected subgradient ascent on the smallest eigenvalue of the certificate over
/// diagonal multipliers. Stops as soon as the certificate is strictly feasible, or when
/// the smallest eigenvalue has not improved for `ASCENT_PATIENCE` iterations.
fn ascend(p: &MlpParams, start: &Multipliers, l: f64) -> Option<Multipliers> {
    let sizes: Vec<usize> = std::iter::once(p.input_dim())
        .chain(p.hidden_dims().iter().copied())
        .collect();
    let mut off = vec![0; sizes.len()];
    for i in 1..sizes.len() {
        off[i] = off[i - 1] + sizes[i - 1];
    }
    let mut m = start.clone();
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0;
    for k in 0..ASCENT_ITERS {
        let (val, u) = cert_min_eigpair(p, &m, l);
        if u.is_empty() {
            return None;
        }
        if val > 0.0 && strictly_feasible(p, &m, l) {
            return Some(m);
        }
        if val > best + 1e-12 * best.abs().max(1e-300) {
            best = val;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= ASCENT_PATIENCE {
                return None;
            }
        }
        let step = 1.0 / (k as f64 + 10.0);
        for i in 1..sizes.len() {
            let prev = &u[off[i - 1]..off[i - 1] + sizes[i - 1]];
            let wu = p.weights[i - 1].mul_vec(prev);
            let ui = &u[off[i]..off[i] + sizes[i]];
            for (j, lam) in m.lambdas[i - 1].iter_mut().enumerate() {
                let g = 2.0 * ui[j] * ui[j] - 2.0 * ui[j] * wu[j];
                *lam = (*lam + step * g).max(LAMBDA_FLOOR);
            }
        }
    }
    strictly_feasible(p, &m, l).then_some(m)
}

/// `lambda_i = prod_{j >= i} ||W_j||^2`: with these the certificate reaches the norm
/// product bound, since each layer's slope constraint telescopes into the next.
fn norm_product_multipliers(p: &MlpParams) -> Multipliers {
    let norms: Vec<f64> = p
        .weights
        .iter()
        .map(|w| spectral_norm(w, NORM_TOL).unwrap_or_else(|_| w.frobenius_norm()))
        .collect();
    let l = p.num_hidden();
    let mut lambdas = Vec::with_capacity(l);
    let mut acc = 1.0;
    for i in (1..=l).rev() {
        acc *= norms[i] * norms[i];
        lambdas.push(vec![acc.max(LAMBDA_FLOOR); p.dims[i]]);
    }
    lambdas.reverse();
    Multipliers { lambdas }
}

fn full_diag_estimate(p: &MlpParams, tol: f64, warm: Option<&Multipliers>) -> LipschitzEstimate {
    let scalar = scalar_estimate(p, tol);
    if !slope_is_sector(p) {
        return estimate(scalar.bound, scalar.multipliers, CertMode::FullDiag);
    }
    let split = split_estimate(p, tol);
    let mut candidates = vec![
        scalar.multipliers.clone(),
        split.multipliers.clone(),
        norm_product_multipliers(p),
    ];
    if let Some(w) = warm.filter(|w| w.check(p).is_ok()) {
        let mut w = w.clone();
        w.clamp_floor(LAMBDA_FLOOR);
        candidates.push(w);
    }
    let start = candidates
        .into_iter()
        .map(|c| (exact_bound(p, &c), c))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
        .unwrap();
    let (bound, m) = bisect(p, tol, start, |l, best| {
        if exact_bound(p, best) <= l {
            return true;
        }
        match ascend(p, best, l) {
            Some(found) => {
                if exact_bound(p, &found) <= exact_bound(p, best) {
                    *best = found;
                }
                true
            }
            None => false,
        }
    });
    let fallback = if scalar.bound <= split.bound { scalar } else { split };
    if bound <= fallback.bound {
        estimate(bound, m, CertMode::FullDiag)
    } else {
        estimate(fallback.bound, fallback.multipliers, CertMode::FullDiag)
    }
}

/// Splits after hidden layer `k = ceil(l / 2)`: the first part maps `x` to the
/// pre-activation of layer `k + 1`, the second applies the remaining activations and
/// weights. Each part is bounded with a scalar multiplier.
///
/// If the parts are certified at `L1` with `Lam1` and at `L2` with `Lam2`, the whole
/// network is certified at `L1 * L2` with `(L2^2 Lam1, Lam2)`; those are the returned
/// multipliers.
fn split_estimate(p: &MlpParams, tol: f64) -> LipschitzEstimate {
    let l = p.num_hidden();
    let k = l.div_ceil(2);
    let act = p.activation;
    let hidden = p.hidden_dims();

    let first = MlpParams::from_layers(
        p.weights[..=k].to_vec(),
        p.biases[..=k].to_vec(),
        act,
    )
    .expect("prefix of a valid network");
    let first_est = if k == 0 {
        estimate(norm_product_bound(&first), Multipliers::uniform(&[], 1.0), CertMode::ScalarLambda)
    } else {
        scalar_estimate(&first, tol)
    };

    let (second_bound, second_m) = if k == l {
        (1.0, Vec::new())
    } else {
        let n = hidden[k];
        let mut weights = vec![Matrix::identity(n)];
        weights.extend_from_slice(&p.weights[k + 1..]);
        let mut biases = vec![vec![0.0; n]];
        biases.extend_from_slice(&p.biases[k + 1..]);
        let second = MlpParams::from_layers(weights, biases, act).expect("suffix of a valid network");
        let est = scalar_estimate(&second, tol);
        (est.bound, est.multipliers.lambdas)
    };

    let mut lambdas: Vec<Vec<f64>> = first_est
        .multipliers
        .lambdas
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * second_bound * second_bound).collect())
        .collect();
    lambdas.extend(second_m);
    estimate(
        first_est.bound * second_bound,
        Multipliers { lambdas },
        CertMode::Split,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn chain(w0: f64, w1: f64) -> MlpParams {
        MlpParams::from_layers(
            vec![Matrix::from_rows(&[vec![w0]]), Matrix::from_rows(&[vec![w1]])],
            vec![vec![0.0], vec![0.0]],
            Activation::Tanh,
        )
        .unwrap()
    }

    #[test]
    fn zero_network_qc_matrix_is_block_diagonal() {
        let p = MlpParams::zeros(&[2, 3, 2], Activation::Tanh).unwrap();
        let qc = QcSpec::lipschitz(2, 2, 1.0, (0.0, 1.0));
        let m = Multipliers::identity_for(&p);
        let mat = assemble_qc_matrix(&p, &qc, &m).unwrap();
        let mut expected = Matrix::identity(5);
        for i in 2..5 {
            expected[(i, i)] = 2.0;
        }
        assert_eq!(mat, expected);
        assert!(check_qc(&p, &qc, &m, 0.0).unwrap().is_certified());
    }

    #[test]
    fn scalar_chain_boundary_and_failure() {
        let p = chain(1.0, 1.0);
        let m = Multipliers::uniform(&[1], 1.0);
        let at_one = assemble_qc_matrix(&p, &QcSpec::lipschitz(1, 1, 1.0, (0.0, 1.0)), &m).unwrap();
        assert_eq!(at_one, Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]));
        assert!(check_qc(&p, &QcSpec::lipschitz(1, 1, 1.0, (0.0, 1.0)), &m, 1e-12)
            .unwrap()
            .is_certified());
        let half = check_qc(&p, &QcSpec::lipschitz(1, 1, 0.5, (0.0, 1.0)), &m, 0.0).unwrap();
        assert_eq!(half.verdict, Verdict::NotCertified);
        // [[0.25, -1], [-1, 1]]: eigenvalues (1.25 -+ sqrt(0.5625 + 4)) / 2.
        let expected = (1.25 - (0.5625f64 + 4.0).sqrt()) / 2.0;
        assert!((half.min_eig - expected).abs() < 1e-14);
    }

    #[test]
    fn norm_product_examples() {
        let p = MlpParams::from_layers(
            vec![Matrix::scaled_identity(2, 3.0), Matrix::scaled_identity(2, 2.0)],
            vec![vec![0.0; 2]; 2],
            Activation::Tanh,
        )
        .unwrap();
        assert!((norm_product_bound(&p) - 6.0).abs() < 1e-12);
        let z = MlpParams::zeros(&[3, 4, 2], Activation::Relu).unwrap();
        assert_eq!(norm_product_bound(&z), 0.0);
        assert_eq!(estimate_lipschitz(&z, CertMode::FullDiag, 1e-3), 0.0);
    }

    #[test]
    fn diagonal_chain_is_tight() {
        let c = 1.7;
        let p = MlpParams::from_layers(
            vec![Matrix::scaled_identity(3, c), Matrix::identity(3)],
            vec![vec![0.0; 3]; 2],
            Activation::Tanh,
        )
        .unwrap();
        let tol = 1e-3;
        for mode in [CertMode::ScalarLambda, CertMode::FullDiag, CertMode::Split] {
            let b = estimate_lipschitz(&p, mode, tol);
            assert!(b >= c * (1.0 - 1e-12) && b <= c * (1.0 + tol), "{mode}: {b}");
        }
    }

    #[test]
    fn mode_parse_round_trip() {
        for m in [CertMode::FullDiag, CertMode::ScalarLambda, CertMode::Split] {
            assert_eq!(m.to_string().parse::<CertMode>().unwrap(), m);
        }
        assert!("bogus".parse::<CertMode>().is_err());
    }

    #[test]
    fn shape_mismatch_reported() {
        let p = chain(1.0, 1.0);
        let qc = QcSpec::lipschitz(2, 1, 1.0, (0.0, 1.0));
        assert!(matches!(
            assemble_qc_matrix(&p, &qc, &Multipliers::uniform(&[1], 1.0)),
            Err(CertifyError::ShapeMismatch(_))
        ));
    }
}
