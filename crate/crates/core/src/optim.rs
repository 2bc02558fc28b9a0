//! Adam over a flat parameter vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Advances the moments with `grads` and returns the bias-corrected update
    /// `-lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn direction(&mut self, grads: &[f64], lr: f64) -> Vec<f64> {
        assert_eq!(grads.len(), self.m.len(), "gradient length");
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let mut out = Vec::with_capacity(grads.len());
        for ((m, v), &g) in self.m.iter_mut().zip(&mut self.v).zip(grads) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            out.push(-lr * (*m / c1) / ((*v / c2).sqrt() + eps));
        }
        out
    }

    /// One in-place Adam update of `params`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        let d = self.direction(grads, lr);
        for (p, di) in params.iter_mut().zip(d) {
            *p += di;
        }
    }
}

/// Functional form: returns the advanced state and updated parameters.
pub fn adam_step(
    state: &AdamState,
    params: &[f64],
    grads: &[f64],
    lr: f64,
) -> (AdamState, Vec<f64>) {
    let mut next = state.clone();
    let mut p = params.to_vec();
    next.step(&mut p, grads, lr);
    (next, p)
}
