//! The Lipschitz certificate matrix, feasibility, and the log-det barrier.
//!
//! For a network with hidden widths `n_1..n_l` and multipliers `Lambda_i = diag(lambda^i)`,
//! the certificate is the symmetric block-tridiagonal matrix with diagonal blocks
//! `(L^2 I, 2 Lambda_1, ..., 2 Lambda_l, I)` and subdiagonal blocks
//! `(-Lambda_1 W_0, ..., -Lambda_l W_{l-1}, -W_l)`. If it is positive semidefinite the
//! network is `L`-Lipschitz. Biases never enter.
//!
//! Barrier gradients use only the block-tridiagonal part of `M^{-1}`: with `S_i` the
//! diagonal blocks and `K_i` the `(i+1, i)` blocks,
//!
//! ```text
//! d logdet / d W_i      = -2 Lambda_{i+1} K_i      (i < l)
//! d logdet / d W_l      = -2 K_l
//! d logdet / d lambda^i = 2 diag(S_i) - 2 rowsum(K_{i-1} .* W_{i-1})
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    block_cholesky, block_cholesky_with_margin, dense_cholesky, cholesky_logdet,
    inverse_from_cholesky, max_eigenvalue, selected_inverse, BlockTridiagonalSymmetric,
    LinalgError, Matrix,
};
use crate::nn::{MlpParams, ParamGrads};
use crate::optim::AdamState;

/// Smallest multiplier value kept during training.
pub const LAMBDA_FLOOR: f64 = 1e-8;

/// Scale factor applied per feasible-initialization attempt.
pub const INIT_SHRINK: f64 = 0.8;
pub const INIT_MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LipschitzError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("Lipschitz target must be positive, got {0}")]
    InvalidTarget(f64),
    #[error("certificate matrix is not positive definite: {0}")]
    InfeasiblePoint(LinalgError),
    #[error("no feasible weight scaling found after {attempts} attempts")]
    InitFailure { attempts: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Diagonals `lambda^1..lambda^l` of the multiplier matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub lambdas: Vec<Vec<f64>>,
}

impl Multipliers {
    pub fn uniform(hidden_dims: &[usize], value: f64) -> Self {
        Self {
            lambdas: hidden_dims.iter().map(|&n| vec![value; n]).collect(),
        }
    }

    /// `Lambda_i = I` for every hidden layer of `p`.
    pub fn identity_for(p: &MlpParams) -> Self {
        Self::uniform(p.hidden_dims(), 1.0)
    }

    pub fn check(&self, p: &MlpParams) -> Result<(), LipschitzError> {
        let dims: Vec<usize> = self.lambdas.iter().map(Vec::len).collect();
        if dims != p.hidden_dims() {
            return Err(LipschitzError::ShapeMismatch(format!(
                "multiplier widths {dims:?} vs hidden widths {:?}",
                p.hidden_dims()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lambdas.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.lambdas.concat()
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat multiplier length");
        let mut pos = 0;
        for l in &mut self.lambdas {
            let n = l.len();
            l.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
    }

    pub fn clamp_floor(&mut self, floor: f64) {
        for v in self.lambdas.iter_mut().flatten() {
            *v = v.max(floor);
        }
    }

    pub fn min_value(&self) -> f64 {
        self.lambdas.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.lambdas.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// Enforced Lipschitz bound `L > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzTarget(f64);

impl LipschitzTarget {
    pub fn new(l: f64) -> Result<Self, LipschitzError> {
        if l > 0.0 && l.is_finite() {
            Ok(Self(l))
        } else {
            Err(LipschitzError::InvalidTarget(l))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Whether the multipliers are trained alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MultiplierMode {
    /// Multipliers fixed before training at `lambda * I`.
    Linear { lambda: f64 },
    /// Multipliers are decision variables.
    Bilinear,
}

pub fn assemble_cert_matrix(
    p: &MlpParams,
    m: &Multipliers,
    t: LipschitzTarget,
) -> Result<BlockTridiagonalSymmetric, LipschitzError> {
    p.validate()
        .map_err(|e| LipschitzError::ShapeMismatch(e.to_string()))?;
    m.check(p)?;
    let l = p.num_hidden();
    let mut diag = Vec::with_capacity(l + 2);
    let mut sub = Vec::with_capacity(l + 1);
    diag.push(Matrix::scaled_identity(p.input_dim(), t.value() * t.value()));
    for (i, lam) in m.lambdas.iter().enumerate() {
        diag.push(Matrix::from_diag(&lam.iter().map(|v| 2.0 * v).collect::<Vec<_>>()));
        sub.push(p.weights[i].scale_rows(lam).scale(-1.0));
    }
    diag.push(Matrix::identity(p.output_dim()));
    sub.push(p.weights[l].scale(-1.0));
    Ok(BlockTridiagonalSymmetric::new(diag, sub)?)
}

/// True iff the blocked Cholesky of the certificate succeeds with every pivot above
/// `margin * max_i M_ii`.
pub fn is_feasible(p: &MlpParams, m: &Multipliers, t: LipschitzTarget, margin: f64) -> bool {
    match assemble_cert_matrix(p, m, t) {
        Ok(cert) => block_cholesky_with_margin(&cert, margin).is_ok(),
        Err(_) => false,
    }
}

/// Returns `p` if feasible, otherwise `p` with all weights scaled by the largest
/// `0.8^k` that makes the certificate feasible.
pub fn feasible_init(
    p: &MlpParams,
    m: &Multipliers,
    t: LipschitzTarget,
    margin: f64,
) -> Result<MlpParams, LipschitzError> {
    m.check(p)?;
    if is_feasible(p, m, t, margin) {
        return Ok(p.clone());
    }
    let mut s = 1.0;
    for _ in 0..INIT_MAX_ATTEMPTS {
        s *= INIT_SHRINK;
        let q = p.with_scaled_weights(s);
        if is_feasible(&q, m, t, margin) {
            return Ok(q);
        }
    }
    Err(LipschitzError::InitFailure {
        attempts: INIT_MAX_ATTEMPTS,
    })
}

/// Value and gradients of `-rho * logdet M`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierEval {
    pub value: f64,
    pub logdet: f64,
    pub grad_weights: Vec<Matrix>,
    pub grad_lambdas: Vec<Vec<f64>>,
}

impl BarrierEval {
    /// Weight gradients in [`ParamGrads`] layout; bias gradients are zero.
    pub fn param_grads(&self, p: &MlpParams) -> ParamGrads {
        let mut g = ParamGrads::zeros_like(p);
        g.weights.clone_from(&self.grad_weights);
        g
    }
}

/// Barrier value and analytic gradients from the blocked factorization.
pub fn barrier_loss_and_grads(
    p: &MlpParams,
    m: &Multipliers,
    t: LipschitzTarget,
    rho: f64,
) -> Result<BarrierEval, LipschitzError> {
    let cert = assemble_cert_matrix(p, m, t)?;
    let chol = block_cholesky(&cert).map_err(LipschitzError::InfeasiblePoint)?;
    let inv = selected_inverse(&chol);
    Ok(barrier_from_blocks(p, m, rho, chol.logdet(), &inv.s, &inv.k))
}

/// Same quantity through a dense Cholesky and the full inverse.
pub fn barrier_loss_and_grads_dense(
    p: &MlpParams,
    m: &Multipliers,
    t: LipschitzTarget,
    rho: f64,
) -> Result<BarrierEval, LipschitzError> {
    let cert = assemble_cert_matrix(p, m, t)?;
    let dense = cert.to_dense();
    let l = dense_cholesky(&dense).map_err(LipschitzError::InfeasiblePoint)?;
    let full = inverse_from_cholesky(&l);
    let sizes = cert.block_sizes();
    let off = cert.offsets();
    let s: Vec<Matrix> = (0..sizes.len())
        .map(|i| full.block(off[i], off[i], sizes[i], sizes[i]))
        .collect();
    let k: Vec<Matrix> = (0..sizes.len() - 1)
        .map(|i| full.block(off[i + 1], off[i], sizes[i + 1], sizes[i]))
        .collect();
    Ok(barrier_from_blocks(p, m, rho, cholesky_logdet(&l), &s, &k))
}

fn barrier_from_blocks(
    p: &MlpParams,
    m: &Multipliers,
    rho: f64,
    logdet: f64,
    s: &[Matrix],
    k: &[Matrix],
) -> BarrierEval {
    let l = p.num_hidden();
    let mut grad_weights = Vec::with_capacity(l + 1);
    for i in 0..l {
        grad_weights.push(k[i].scale_rows(&m.lambdas[i]).scale(2.0 * rho));
    }
    grad_weights.push(k[l].scale(2.0 * rho));

    let grad_lambdas = (1..=l)
        .map(|i| {
            let ki = &k[i - 1];
            let wi = &p.weights[i - 1];
            (0..ki.rows())
                .map(|r| {
                    let coupling: f64 = ki.row(r).iter().zip(wi.row(r)).map(|(a, b)| a * b).sum();
                    -rho * (2.0 * s[i][(r, r)] - 2.0 * coupling)
                })
                .collect()
        })
        .collect();

    BarrierEval {
        value: -rho * logdet,
        logdet,
        grad_weights,
        grad_lambdas,
    }
}

/// Smallest `L` for which the certificate with these multipliers is positive
/// semidefinite, or `None` if no `L` works.
///
/// With `C` the certificate minus its first block row/column, `M(L) >= 0` iff `C > 0`
/// and `L^2 >= lambda_max(W_0^T Lambda_1 [C^{-1}]_{11} Lambda_1 W_0)`.
pub fn bound_at_multipliers(p: &MlpParams, m: &Multipliers) -> Option<f64> {
    m.check(p).ok()?;
    let cert = assemble_cert_matrix(p, m, LipschitzTarget(1.0)).ok()?;
    let tail = BlockTridiagonalSymmetric::new(
        cert.diag_blocks()[1..].to_vec(),
        cert.sub_blocks()[1..].to_vec(),
    )
    .ok()?;
    let chol = block_cholesky(&tail).ok()?;
    let c11 = selected_inverse(&chol).s.swap_remove(0);
    let b = p.weights[0].scale_rows(&m.lambdas[0]);
    let mut g = b.t_matmul(&c11.matmul(&b));
    g.symmetrize();
    let top = max_eigenvalue(&g).ok()?;
    Some(top.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub lr: f64,
    /// Relative pivot margin every accepted point must satisfy.
    pub margin: f64,
    pub backoff: f64,
    pub max_backoffs: usize,
    pub lambda_floor: f64,
}

impl StepConfig {
    pub fn new(lr: f64, margin: f64) -> Self {
        Self {
            lr,
            margin,
            backoff: 0.5,
            max_backoffs: 20,
            lambda_floor: LAMBDA_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub params: MlpParams,
    pub multipliers: Multipliers,
    pub accepted: bool,
    /// How many times the step was halved before acceptance (or rejection).
    pub backoffs: usize,
}

/// Length of the optimizer state `constrained_step` expects for `mode`.
pub fn optimizer_len(p: &MlpParams, m: &Multipliers, mode: MultiplierMode) -> usize {
    match mode {
        MultiplierMode::Linear { .. } => p.num_params(),
        MultiplierMode::Bilinear => p.num_params() + m.len(),
    }
}

/// One Adam step on `L_task - rho logdet M` that keeps the certificate feasible.
///
/// The proposal is halved until feasible, at most `max_backoffs` times; if it never
/// becomes feasible the original point is returned with `accepted = false`.
#[allow(clippy::too_many_arguments)]
pub fn constrained_step(
    p: &MlpParams,
    m: &Multipliers,
    t: LipschitzTarget,
    task_grads: &ParamGrads,
    barrier: &BarrierEval,
    optimizer: &mut AdamState,
    mode: MultiplierMode,
    cfg: &StepConfig,
) -> StepOutcome {
    let mut grads = task_grads.clone();
    for (g, b) in grads.weights.iter_mut().zip(&barrier.grad_weights) {
        *g = g.add(b);
    }
    let mut flat = grads.to_flat();
    let n_theta = flat.len();
    if mode == MultiplierMode::Bilinear {
        flat.extend(barrier.grad_lambdas.iter().flatten());
    }
    let dir = optimizer.direction(&flat, cfg.lr);

    let theta = p.to_flat();
    let lambda = m.to_flat();
    let mut scale = 1.0;
    for backoffs in 0..=cfg.max_backoffs {
        let mut q = p.clone();
        let next: Vec<f64> = theta
            .iter()
            .zip(&dir[..n_theta])
            .map(|(x, d)| x + scale * d)
            .collect();
        q.set_from_flat(&next);
        let mut mm = m.clone();
        if mode == MultiplierMode::Bilinear {
            let next_l: Vec<f64> = lambda
                .iter()
                .zip(&dir[n_theta..])
                .map(|(x, d)| (x + scale * d).max(cfg.lambda_floor))
                .collect();
            mm.set_from_flat(&next_l);
        }
        if is_feasible(&q, &mm, t, cfg.margin) {
            return StepOutcome {
                params: q,
                multipliers: mm,
                accepted: true,
                backoffs,
            };
        }
        scale *= cfg.backoff;
    }
    StepOutcome {
        params: p.clone(),
        multipliers: m.clone(),
        accepted: false,
        backoffs: cfg.max_backoffs,
    }
}
