//! Feedforward networks with slope-restricted activations.
//!
//! A network with `l` hidden layers maps
//! `w^0 = x`, `w^i = phi(W_{i-1} w^{i-1} + b_{i-1})` for `i = 1..=l`, and outputs
//! `W_l w^l + b_l`. Weights are stored row-major with shape `n_{i+1} x n_i`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm2, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid layer widths: {0}")]
    InvalidDims(String),
    #[error("unknown activation `{0}`")]
    UnknownActivation(String),
}

/// Scalar nonlinearity applied elementwise at every hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu { slope } => {
                if v > 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative; the kink of (leaky) ReLU at 0 takes the left slope.
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if v > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s)
            }
        }
    }

    #[inline]
    pub fn second_derivative(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = v.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Relu | Activation::LeakyRelu { .. } => 0.0,
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
        }
    }

    /// Global slope bounds `(alpha, beta)`.
    pub fn slope_range(self) -> (f64, f64) {
        match self {
            Activation::Tanh | Activation::Relu => (0.0, 1.0),
            Activation::LeakyRelu { slope } => (slope, 1.0),
            Activation::Sigmoid => (0.0, 0.25),
        }
    }
}

/// Global slope bounds of an activation.
pub fn slope_range(kind: Activation) -> (f64, f64) {
    kind.slope_range()
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => write!(f, "tanh"),
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu { slope } => write!(f, "leaky_relu:{slope}"),
            Activation::Sigmoid => write!(f, "sigmoid"),
        }
    }
}

impl FromStr for Activation {
    type Err = NnError;

    /// Accepts `tanh`, `relu`, `sigmoid`, `leaky_relu` (slope 0.2) or `leaky_relu:<s>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "leaky_relu" => Ok(Activation::LeakyRelu { slope: 0.2 }),
            _ => {
                let slope = s
                    .strip_prefix("leaky_relu:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| *v > 0.0 && *v < 1.0)
                    .ok_or_else(|| NnError::UnknownActivation(s.to_string()))?;
                Ok(Activation::LeakyRelu { slope })
            }
        }
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax followed by negative log-likelihood of an integer label.
    CrossEntropy,
    /// Mean over output components of the squared error.
    MeanSquaredError,
    /// `target[0] * f(x)[0]`; a critic minimizes this with `-1` on real and `+1` on fake samples.
    WassersteinCritic,
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
            "mse" | "mean_squared_error" => Ok(LossKind::MeanSquaredError),
            "wasserstein_critic" => Ok(LossKind::WassersteinCritic),
            other => Err(format!("unknown loss `{other}`")),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::MeanSquaredError => "mse",
            LossKind::WassersteinCritic => "wasserstein_critic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Label(usize),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub target: Target,
}

impl Sample {
    pub fn labeled(x: Vec<f64>, label: usize) -> Self {
        Self {
            x,
            target: Target::Label(label),
        }
    }

    pub fn valued(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            x,
            target: Target::Values(y),
        }
    }
}

/// Weights and biases of a feedforward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub dims: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

impl MlpParams {
    /// All-zero network with the given widths `(n_0, ..., n_{l+1})`.
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self, NnError> {
        validate_dims(dims)?;
        let weights = dims.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect();
        let biases = dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut p = Self::zeros(dims, activation)?;
        for w in &mut p.weights {
            let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(p)
    }

    /// Builds a network from explicit layers, checking every shape.
    pub fn from_layers(
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self, NnError> {
        if weights.is_empty() {
            return Err(NnError::InvalidDims("no layers".into()));
        }
        let mut dims = vec![weights[0].cols()];
        dims.extend(weights.iter().map(Matrix::rows));
        let p = Self {
            dims,
            weights,
            biases,
            activation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        validate_dims(&self.dims)?;
        if self.weights.len() + 1 != self.dims.len() || self.biases.len() + 1 != self.dims.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} widths need {} layers, got {} weights and {} biases",
                self.dims.len(),
                self.dims.len() - 1,
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.shape() != (self.dims[i + 1], self.dims[i]) || b.len() != self.dims[i + 1] {
                return Err(NnError::ShapeMismatch(format!(
                    "layer {i}: weight {}x{}, bias {}, expected {}x{}",
                    w.rows(),
                    w.cols(),
                    b.len(),
                    self.dims[i + 1],
                    self.dims[i]
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Number of hidden layers `l`.
    pub fn num_hidden(&self) -> usize {
        self.dims.len() - 2
    }

    /// Widths `(n_1, ..., n_l)` of the hidden layers.
    pub fn hidden_dims(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameters flattened as `W_0, ..., W_l` (row-major) followed by `b_0, ..., b_l`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for w in &self.weights {
            out.extend_from_slice(w.as_slice());
        }
        for b in &self.biases {
            out.extend_from_slice(b);
        }
        out
    }

    /// Inverse of [`MlpParams::to_flat`].
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut pos = 0;
        for w in &mut self.weights {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        for b in &mut self.biases {
            let n = b.len();
            b.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
    }

    /// Copy with every weight matrix multiplied by `s`; biases untouched.
    pub fn with_scaled_weights(&self, s: f64) -> Self {
        let mut p = self.clone();
        for w in &mut p.weights {
            *w = w.scale(s);
        }
        p
    }
}

fn validate_dims(dims: &[usize]) -> Result<(), NnError> {
    if dims.len() < 3 {
        return Err(NnError::InvalidDims(format!(
            "need at least one hidden layer, got widths {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(NnError::InvalidDims(format!("zero width in {dims:?}")));
    }
    Ok(())
}

/// Gradients with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Self {
            weights: p.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: p.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &self.weights {
            out.extend_from_slice(w.as_slice());
        }
        for b in &self.biases {
            out.extend_from_slice(b);
        }
        out
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &ParamGrads, s: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += s * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Pre-activations `v^1..v^l`, activations `w^0..w^l`, and the output.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn forward(p: &MlpParams, x: &[f64]) -> Result<Vec<f64>, NnError> {
    Ok(forward_trace(p, x)?.output)
}

pub fn forward_trace(p: &MlpParams, x: &[f64]) -> Result<ForwardTrace, NnError> {
    if x.len() != p.input_dim() {
        return Err(NnError::ShapeMismatch(format!(
            "input of length {}, network expects {}",
            x.len(),
            p.input_dim()
        )));
    }
    let l = p.num_hidden();
    let mut pre = Vec::with_capacity(l);
    let mut post = Vec::with_capacity(l + 1);
    post.push(x.to_vec());
    for i in 0..l {
        let mut v = p.weights[i].mul_vec(&post[i]);
        for (vk, bk) in v.iter_mut().zip(&p.biases[i]) {
            *vk += bk;
        }
        let w = v.iter().map(|&t| p.activation.apply(t)).collect();
        pre.push(v);
        post.push(w);
    }
    let mut output = p.weights[l].mul_vec(&post[l]);
    for (o, b) in output.iter_mut().zip(&p.biases[l]) {
        *o += b;
    }
    Ok(ForwardTrace { pre, post, output })
}

/// Reverse-mode pass for an output cotangent `dout`.
///
/// Adds `scale * dL/dtheta` into `grads` and returns `dL/dx` (unscaled).
pub fn backward_accumulate(
    p: &MlpParams,
    trace: &ForwardTrace,
    dout: &[f64],
    grads: &mut ParamGrads,
    scale: f64,
) -> Vec<f64> {
    let l = p.num_hidden();
    let mut delta = dout.to_vec();
    for i in (0..=l).rev() {
        if i < l {
            // delta currently holds dL/dw^{i+1}; move to dL/dv^{i+1}.
            for (d, &v) in delta.iter_mut().zip(&trace.pre[i]) {
                *d *= p.activation.derivative(v);
            }
        }
        let input = &trace.post[i];
        let gw = &mut grads.weights[i];
        for (r, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let sd = scale * d;
            for (g, &a) in gw.row_mut(r).iter_mut().zip(input) {
                *g += sd * a;
            }
            grads.biases[i][r] += sd;
        }
        delta = p.weights[i].tr_mul_vec(&delta);
    }
    delta
}

/// Parameter gradient and input gradient for an output cotangent.
pub fn backward(p: &MlpParams, trace: &ForwardTrace, dout: &[f64]) -> (ParamGrads, Vec<f64>) {
    let mut grads = ParamGrads::zeros_like(p);
    let dx = backward_accumulate(p, trace, dout, &mut grads, 1.0);
    (grads, dx)
}

/// Mean loss over the batch and its exact gradient.
pub fn loss_and_grad(
    p: &MlpParams,
    batch: &[Sample],
    kind: LossKind,
) -> Result<(f64, ParamGrads), NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let inv_n = 1.0 / batch.len() as f64;
    let mut grads = ParamGrads::zeros_like(p);
    let mut total = 0.0;
    for sample in batch {
        let trace = forward_trace(p, &sample.x)?;
        let (loss, dout) = sample_loss(&trace.output, &sample.target, kind)?;
        total += loss;
        backward_accumulate(p, &trace, &dout, &mut grads, inv_n);
    }
    Ok((total * inv_n, grads))
}

/// Mean loss over the batch without gradients.
pub fn batch_loss(p: &MlpParams, batch: &[Sample], kind: LossKind) -> Result<f64, NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut total = 0.0;
    for sample in batch {
        let out = forward(p, &sample.x)?;
        total += sample_loss(&out, &sample.target, kind)?.0;
    }
    Ok(total / batch.len() as f64)
}

/// Per-sample loss and its gradient with respect to the network output.
fn sample_loss(out: &[f64], target: &Target, kind: LossKind) -> Result<(f64, Vec<f64>), NnError> {
    match (kind, target) {
        (LossKind::CrossEntropy, Target::Label(label)) => {
            let classes = out.len();
            if *label >= classes {
                return Err(NnError::InvalidLabel {
                    label: *label,
                    classes,
                });
            }
            let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = out.iter().map(|o| (o - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let loss = z.ln() + max - out[*label];
            let mut g: Vec<f64> = exps.iter().map(|e| e / z).collect();
            g[*label] -= 1.0;
            Ok((loss, g))
        }
        (LossKind::MeanSquaredError, Target::Values(y)) => {
            check_len(out, y)?;
            let n = out.len() as f64;
            let loss = out.iter().zip(y).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / n;
            let g = out.iter().zip(y).map(|(o, t)| 2.0 * (o - t) / n).collect();
            Ok((loss, g))
        }
        (LossKind::WassersteinCritic, Target::Values(y)) => {
            if out.len() != 1 || y.len() != 1 {
                return Err(NnError::ShapeMismatch(
                    "critic loss needs a scalar output and a scalar sign".into(),
                ));
            }
            Ok((y[0] * out[0], vec![y[0]]))
        }
        (kind, target) => Err(NnError::ShapeMismatch(format!(
            "loss {kind} does not accept target {target:?}"
        ))),
    }
}

fn check_len(out: &[f64], y: &[f64]) -> Result<(), NnError> {
    if out.len() != y.len() {
        return Err(NnError::ShapeMismatch(format!(
            "output of length {}, target of length {}",
            out.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Index of the largest output.
pub fn predict_class(p: &MlpParams, x: &[f64]) -> Result<usize, NnError> {
    let out = forward(p, x)?;
    Ok(out
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap())
}

/// Fraction of labeled samples classified correctly (0 for an empty set).
pub fn accuracy(p: &MlpParams, samples: &[Sample]) -> Result<f64, NnError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in samples {
        if let Target::Label(label) = s.target {
            if predict_class(p, &s.x)? == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// `d f(x) / d x` for a scalar-output network.
pub fn input_gradient(p: &MlpParams, x: &[f64]) -> Result<Vec<f64>, NnError> {
    if p.output_dim() != 1 {
        return Err(NnError::ShapeMismatch("input gradient needs a scalar output".into()));
    }
    let trace = forward_trace(p, x)?;
    let mut scratch = ParamGrads::zeros_like(p);
    Ok(backward_accumulate(p, &trace, &[1.0], &mut scratch, 0.0))
}

/// Gradient penalty `mu * mean_x (||d f(x)/dx|| - 1)^2` and its parameter gradient.
///
/// The parameter gradient differentiates through the input gradient, so it needs
/// second derivatives of the activation.
pub fn gradient_penalty_and_grad(
    p: &MlpParams,
    points: &[Vec<f64>],
    mu: f64,
) -> Result<(f64, ParamGrads), NnError> {
    if points.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    if p.output_dim() != 1 {
        return Err(NnError::ShapeMismatch("gradient penalty needs a scalar output".into()));
    }
    let l = p.num_hidden();
    let act = p.activation;
    let inv_n = 1.0 / points.len() as f64;
    let mut grads = ParamGrads::zeros_like(p);
    let mut total = 0.0;

    for x in points {
        let trace = forward_trace(p, x)?;
        // u[i] = df/dw^i, a[i] = df/dv^i.
        let mut u: Vec<Vec<f64>> = vec![Vec::new(); l + 1];
        let mut a: Vec<Vec<f64>> = vec![Vec::new(); l + 1];
        u[l] = p.weights[l].row(0).to_vec();
        for i in (1..=l).rev() {
            a[i] = trace.pre[i - 1]
                .iter()
                .zip(&u[i])
                .map(|(&v, &ui)| act.derivative(v) * ui)
                .collect();
            u[i - 1] = p.weights[i - 1].tr_mul_vec(&a[i]);
        }
        let g = &u[0];
        let norm = norm2(g);
        total += mu * (norm - 1.0).powi(2);
        let coeff = if norm > 0.0 {
            2.0 * mu * (norm - 1.0) / norm
        } else {
            0.0
        };
        let scale = coeff * inv_n;
        if scale == 0.0 {
            continue;
        }

        // Reverse through the input-gradient computation.
        let mut ubar: Vec<f64> = g.iter().map(|v| v * scale).collect();
        let mut seed: Vec<Vec<f64>> = vec![Vec::new(); l + 1];
        for i in 1..=l {
            let w = &p.weights[i - 1];
            let abar = w.mul_vec(&ubar);
            let gw = &mut grads.weights[i - 1];
            for (r, &ar) in a[i].iter().enumerate() {
                if ar == 0.0 {
                    continue;
                }
                for (gg, &ub) in gw.row_mut(r).iter_mut().zip(&ubar) {
                    *gg += ar * ub;
                }
            }
            let v = &trace.pre[i - 1];
            seed[i] = (0..v.len())
                .map(|k| act.second_derivative(v[k]) * u[i][k] * abar[k])
                .collect();
            ubar = (0..v.len()).map(|k| act.derivative(v[k]) * abar[k]).collect();
        }
        for (gg, ub) in grads.weights[l].row_mut(0).iter_mut().zip(&ubar) {
            *gg += ub;
        }

        // Reverse through the forward pass, seeded by the activation-derivative terms.
        let mut vbar_next: Option<Vec<f64>> = None;
        for i in (1..=l).rev() {
            let v = &trace.pre[i - 1];
            let mut vbar = seed[i].clone();
            if let Some(next) = &vbar_next {
                let wbar = p.weights[i].tr_mul_vec(next);
                for k in 0..v.len() {
                    vbar[k] += act.derivative(v[k]) * wbar[k];
                }
            }
            let input = &trace.post[i - 1];
            let gw = &mut grads.weights[i - 1];
            for (r, &d) in vbar.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (gg, &xin) in gw.row_mut(r).iter_mut().zip(input) {
                    *gg += d * xin;
                }
                grads.biases[i - 1][r] += d;
            }
            vbar_next = Some(vbar);
        }
    }
    Ok((total * inv_n, grads))
}

/// Euclidean distance between two vectors.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    dot(&d, &d).sqrt()
}
