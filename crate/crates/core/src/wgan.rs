//! Toy Wasserstein GAN on 2D point clouds with three ways of keeping the critic
//! Lipschitz: the log-det barrier (certified), weight clipping, and a gradient penalty.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::certify::{estimate_lipschitz_with, CertMode};
use crate::lipschitz::{
    barrier_loss_and_grads, bound_at_multipliers, constrained_step, feasible_init, is_feasible,
    optimizer_len, LipschitzError, LipschitzTarget, MultiplierMode, Multipliers, StepConfig,
};
use crate::nn::{
    backward, forward, forward_trace, gradient_penalty_and_grad, input_gradient, loss_and_grad,
    Activation, LossKind, MlpParams, NnError, ParamGrads, Sample, Target,
};
use crate::optim::{AdamConfig, AdamState};
use crate::trainer::{Dataset, Split};

#[derive(Debug, Error)]
pub enum GanError {
    #[error("data error: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Lipschitz(#[from] LipschitzError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintMethod {
    Barrier,
    WeightClip { c: f64 },
    GradientPenalty { mu: f64 },
}

impl ConstraintMethod {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintMethod::Barrier => "barrier",
            ConstraintMethod::WeightClip { .. } => "clip",
            ConstraintMethod::GradientPenalty { .. } => "gp",
        }
    }
}

impl FromStr for ConstraintMethod {
    type Err = String;

    /// `barrier`, `clip` (c = 0.01), `clip:<c>`, `gp` (mu = 10), `gp:<mu>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |default: f64| -> Result<f64, String> {
            arg.map_or(Ok(default), |a| a.parse().map_err(|e| format!("`{a}`: {e}")))
        };
        match name {
            "barrier" if arg.is_none() => Ok(ConstraintMethod::Barrier),
            "clip" | "weight_clip" => Ok(ConstraintMethod::WeightClip { c: num(0.01)? }),
            "gp" | "gradient_penalty" => Ok(ConstraintMethod::GradientPenalty { mu: num(10.0)? }),
            _ => Err(format!("unknown method `{s}` (expected barrier, clip[:c] or gp[:mu])")),
        }
    }
}

/// Mixture of Gaussians on a circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingSpec {
    pub modes: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for RingSpec {
    fn default() -> Self {
        Self {
            modes: 8,
            radius: 1.0,
            sigma: 0.05,
        }
    }
}

impl RingSpec {
    pub fn centre(&self, k: usize) -> [f64; 2] {
        let a = 2.0 * std::f64::consts::PI * k as f64 / self.modes as f64;
        [self.radius * a.cos(), self.radius * a.sin()]
    }

    /// Fraction of `points` within `3 sigma` of some centre.
    pub fn coverage(&self, points: &[Vec<f64>]) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let reach = 3.0 * self.sigma;
        let hits = points
            .iter()
            .filter(|p| {
                (0..self.modes).any(|k| {
                    let c = self.centre(k);
                    ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() <= reach
                })
            })
            .count();
        hits as f64 / points.len() as f64
    }
}

/// `n` points, each from a uniformly chosen mode; the label is the mode index.
pub fn sample_ring(n: usize, modes: usize, radius: f64, sigma: f64, seed: u64) -> Dataset {
    assert!(modes >= 1, "at least one mode");
    let spec = RingSpec {
        modes,
        radius,
        sigma,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(0.0)).unwrap();
    let samples = (0..n)
        .map(|_| {
            let k = rng.random_range(0..modes);
            let c = spec.centre(k);
            Sample::labeled(
                vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)],
                k,
            )
        })
        .collect();
    Dataset::new(samples, Split::Train)
}

const GAN_ADAM: AdamConfig = AdamConfig {
    lr: 1e-3,
    beta1: 0.5,
    beta2: 0.9,
    eps: 1e-8,
};

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    /// `(noise_dim, ..., 2)`.
    pub generator_dims: Vec<usize>,
    /// `(2, ..., 1)`.
    pub critic_dims: Vec<usize>,
    pub generator_activation: Activation,
    pub critic_activation: Activation,
    pub critic_steps: usize,
    pub method: ConstraintMethod,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lipschitz: f64,
    pub critic_adam: AdamConfig,
    pub generator_adam: AdamConfig,
    pub rho0: f64,
    pub rho_decay: f64,
    pub rho_period: usize,
    pub margin: f64,
    pub multiplier_mode: MultiplierMode,
    /// Keep the generator at all-zero parameters (it then outputs the origin).
    pub freeze_generator: bool,
    /// Used for the coverage metric.
    pub ring: RingSpec,
    pub cert_tol: f64,
}

impl GanConfig {
    fn with_method(method: ConstraintMethod) -> Self {
        Self {
            generator_dims: vec![2, 16, 16, 2],
            critic_dims: vec![2, 16, 16, 1],
            generator_activation: Activation::Relu,
            critic_activation: Activation::LeakyRelu { slope: 0.2 },
            critic_steps: 5,
            method,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            lipschitz: 1.0,
            critic_adam: GAN_ADAM,
            generator_adam: GAN_ADAM,
            rho0: 1e-3,
            rho_decay: 0.8,
            rho_period: 10,
            margin: 1e-9,
            multiplier_mode: MultiplierMode::Bilinear,
            freeze_generator: false,
            ring: RingSpec::default(),
            cert_tol: 1e-3,
        }
    }

    pub fn barrier() -> Self {
        Self::with_method(ConstraintMethod::Barrier)
    }

    pub fn weight_clip(c: f64) -> Self {
        Self::with_method(ConstraintMethod::WeightClip { c })
    }

    pub fn gradient_penalty(mu: f64) -> Self {
        Self::with_method(ConstraintMethod::GradientPenalty { mu })
    }

    pub fn validate(&self) -> Result<(), GanError> {
        let bad = |m: &str| Err(GanError::Config(m.into()));
        if self.critic_steps == 0 {
            return bad("critic_steps must be at least 1");
        }
        if self.generator_dims.len() < 2 || *self.generator_dims.last().unwrap() != 2 {
            return bad("generator must map to 2 dimensions");
        }
        if self.critic_dims.len() < 3 || self.critic_dims[0] != 2 || *self.critic_dims.last().unwrap() != 1 {
            return bad("critic must map 2 dimensions to 1 through at least one hidden layer");
        }
        match self.method {
            ConstraintMethod::WeightClip { c } if !(c > 0.0) => return bad("clip value must be positive"),
            ConstraintMethod::GradientPenalty { mu } if !(mu >= 0.0) => {
                return bad("penalty weight must be nonnegative")
            }
            _ => {}
        }
        if self.batch_size == 0 || !(self.rho0 > 0.0) || !(self.lipschitz > 0.0) {
            return bad("batch_size, rho0 and lipschitz must be positive");
        }
        Ok(())
    }
}

/// `c^(l+1) prod_i sqrt(n_i n_{i+1})`: the norm-product bound every critic with entries
/// in `[-c, c]` satisfies (for activations with slopes at most 1).
pub fn clip_norm_bound(dims: &[usize], c: f64) -> f64 {
    dims.windows(2)
        .map(|w| c * ((w[0] * w[1]) as f64).sqrt())
        .product()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanEpoch {
    pub epoch: usize,
    /// Mean critic value on the data minus mean critic value on a fixed fake batch.
    pub wasserstein: f64,
    pub certified_bound: f64,
    /// Bound certified by the trained multipliers (barrier only).
    pub multiplier_bound: Option<f64>,
    pub coverage: f64,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GanMetrics {
    pub epochs: Vec<GanEpoch>,
    /// Generator samples after training.
    pub samples: Vec<Vec<f64>>,
    pub snapshot_path: Option<String>,
}

pub const GAN_METRICS_HEADER: &str =
    "epoch,wasserstein,certified_bound,multiplier_bound,coverage,rejected_steps";

impl GanMetrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(GAN_METRICS_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch,
                e.wasserstein,
                e.certified_bound,
                e.multiplier_bound.map_or_else(String::new, |b| b.to_string()),
                e.coverage,
                e.rejected_steps
            );
        }
        out
    }

    pub fn samples_csv(&self) -> String {
        let mut out = String::from("x1,x2\n");
        for p in &self.samples {
            let _ = writeln!(out, "{},{}", p[0], p[1]);
        }
        out
    }
}

/// Mean of `f` over `data` minus its mean over `fake`.
pub fn wasserstein_estimate(
    f: &MlpParams,
    data: &[Vec<f64>],
    fake: &[Vec<f64>],
) -> Result<f64, GanError> {
    if data.is_empty() || fake.is_empty() {
        return Err(GanError::Data("empty batch".into()));
    }
    let mean = |xs: &[Vec<f64>]| -> Result<f64, NnError> {
        let mut s = 0.0;
        for x in xs {
            s += forward(f, x)?[0];
        }
        Ok(s / xs.len() as f64)
    };
    Ok(mean(data)? - mean(fake)?)
}

fn noise_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

fn generate(g: &MlpParams, z: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NnError> {
    z.iter().map(|z| forward(g, z)).collect()
}

struct Critic {
    p: MlpParams,
    m: Multipliers,
    opt: AdamState,
}

/// Trains generator and critic in alternation: `critic_steps` critic updates on
/// `-(mean f(real) - mean f(fake))` per generator update on `-mean f(g(z))`.
pub fn wgan_train(
    cfg: &GanConfig,
    data: &Dataset,
) -> Result<(MlpParams, MlpParams, GanMetrics), GanError> {
    cfg.validate()?;
    let real: Vec<Vec<f64>> = data.samples.iter().map(|s| s.x.clone()).collect();
    if real.is_empty() || real.iter().any(|x| x.len() != 2) {
        return Err(GanError::Data("need a nonempty set of 2D points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise_dim = cfg.generator_dims[0];
    let target = LipschitzTarget::new(cfg.lipschitz)?;

    let mut gen = if cfg.freeze_generator {
        MlpParams::zeros(&cfg.generator_dims, cfg.generator_activation)?
    } else {
        MlpParams::glorot(&cfg.generator_dims, cfg.generator_activation, &mut rng)?
    };
    let mut critic = {
        let p = MlpParams::glorot(&cfg.critic_dims, cfg.critic_activation, &mut rng)?;
        let lambda = match cfg.multiplier_mode {
            MultiplierMode::Linear { lambda } => lambda,
            MultiplierMode::Bilinear => 1.0,
        };
        let m = Multipliers::uniform(p.hidden_dims(), lambda);
        let p = if cfg.method == ConstraintMethod::Barrier {
            feasible_init(&p, &m, target, cfg.margin)?
        } else {
            p
        };
        let len = optimizer_len(&p, &m, cfg.multiplier_mode);
        let len = if cfg.method == ConstraintMethod::Barrier { len } else { p.num_params() };
        Critic {
            opt: AdamState::new(len, cfg.critic_adam),
            p,
            m,
        }
    };
    let mut gen_opt = AdamState::new(gen.num_params(), cfg.generator_adam);
    let step_cfg = StepConfig::new(cfg.critic_adam.lr, cfg.margin);

    let eval_noise = noise_batch(&mut rng, real.len().min(512), noise_dim);
    let iters = (real.len() / cfg.batch_size).max(1);
    let mut rho = cfg.rho0;
    let mut metrics = GanMetrics::default();

    for epoch in 0..cfg.epochs {
        if epoch > 0 && epoch % cfg.rho_period == 0 {
            rho *= cfg.rho_decay;
        }
        let mut rejected = 0;
        for _ in 0..iters {
            for _ in 0..cfg.critic_steps {
                let batch_real: Vec<&Vec<f64>> = (0..cfg.batch_size)
                    .map(|_| &real[rng.random_range(0..real.len())])
                    .collect();
                let fake = generate(&gen, &noise_batch(&mut rng, cfg.batch_size, noise_dim))?;
                if !critic_step(cfg, &mut critic, &batch_real, &fake, target, rho, &step_cfg, &mut rng)? {
                    rejected += 1;
                }
            }
            if !cfg.freeze_generator {
                generator_step(cfg, &mut gen, &mut gen_opt, &critic.p, &mut rng)?;
            }
        }

        let fake = generate(&gen, &eval_noise)?;
        let warm = (cfg.method == ConstraintMethod::Barrier).then_some(&critic.m);
        let certified =
            estimate_lipschitz_with(&critic.p, CertMode::FullDiag, cfg.cert_tol, warm).bound;
        metrics.epochs.push(GanEpoch {
            epoch: epoch + 1,
            wasserstein: wasserstein_estimate(&critic.p, &real, &fake)?,
            certified_bound: certified,
            multiplier_bound: (cfg.method == ConstraintMethod::Barrier)
                .then(|| bound_at_multipliers(&critic.p, &critic.m))
                .flatten(),
            coverage: cfg.ring.coverage(&fake),
            rejected_steps: rejected,
        });
        log::info!(
            "{} epoch {} W {:.4} bound {:.4}",
            cfg.method.name(),
            epoch + 1,
            metrics.epochs.last().unwrap().wasserstein,
            certified
        );
    }
    metrics.samples = generate(&gen, &eval_noise)?;
    Ok((gen, critic.p, metrics))
}

#[allow(clippy::too_many_arguments)]
fn critic_step(
    cfg: &GanConfig,
    critic: &mut Critic,
    real: &[&Vec<f64>],
    fake: &[Vec<f64>],
    target: LipschitzTarget,
    rho: f64,
    step_cfg: &StepConfig,
    rng: &mut ChaCha8Rng,
) -> Result<bool, GanError> {
    // Critic loss with target -1 on real and +1 on fake: the mean over the joint batch
    // is half the negated Wasserstein estimate.
    let batch: Vec<Sample> = real
        .iter()
        .map(|x| Sample {
            x: (*x).clone(),
            target: Target::Values(vec![-1.0]),
        })
        .chain(fake.iter().map(|x| Sample {
            x: x.clone(),
            target: Target::Values(vec![1.0]),
        }))
        .collect();
    let (_, mut grads) = loss_and_grad(&critic.p, &batch, LossKind::WassersteinCritic)?;

    match cfg.method {
        ConstraintMethod::Barrier => {
            let b = barrier_loss_and_grads(&critic.p, &critic.m, target, rho)?;
            let out = constrained_step(
                &critic.p,
                &critic.m,
                target,
                &grads,
                &b,
                &mut critic.opt,
                cfg.multiplier_mode,
                step_cfg,
            );
            if out.accepted {
                debug_assert!(is_feasible(&out.params, &out.multipliers, target, cfg.margin));
                critic.p = out.params;
                critic.m = out.multipliers;
            }
            Ok(out.accepted)
        }
        ConstraintMethod::WeightClip { c } => {
            adam_update(&mut critic.p, &mut critic.opt, &grads, cfg.critic_adam.lr);
            for w in &mut critic.p.weights {
                for v in w.as_mut_slice() {
                    *v = v.clamp(-c, c);
                }
            }
            Ok(true)
        }
        ConstraintMethod::GradientPenalty { mu } => {
            let points: Vec<Vec<f64>> = real
                .iter()
                .zip(fake)
                .map(|(r, f)| {
                    let t: f64 = rng.random_range(0.0..1.0);
                    vec![t * r[0] + (1.0 - t) * f[0], t * r[1] + (1.0 - t) * f[1]]
                })
                .collect();
            let (_, pg) = gradient_penalty_and_grad(&critic.p, &points, mu)?;
            grads.add_scaled(&pg, 1.0);
            adam_update(&mut critic.p, &mut critic.opt, &grads, cfg.critic_adam.lr);
            Ok(true)
        }
    }
}

fn adam_update(p: &mut MlpParams, opt: &mut AdamState, grads: &ParamGrads, lr: f64) {
    let mut theta = p.to_flat();
    opt.step(&mut theta, &grads.to_flat(), lr);
    p.set_from_flat(&theta);
}

fn generator_step(
    cfg: &GanConfig,
    gen: &mut MlpParams,
    opt: &mut AdamState,
    critic: &MlpParams,
    rng: &mut ChaCha8Rng,
) -> Result<(), GanError> {
    let z = noise_batch(rng, cfg.batch_size, cfg.generator_dims[0]);
    let inv_n = 1.0 / z.len() as f64;
    let mut grads = ParamGrads::zeros_like(gen);
    for zi in &z {
        let trace = forward_trace(gen, zi)?;
        let df = input_gradient(critic, &trace.output)?;
        let dout: Vec<f64> = df.iter().map(|v| -v * inv_n).collect();
        let (g, _) = backward(gen, &trace, &dout);
        grads.add_scaled(&g, 1.0);
    }
    adam_update(gen, opt, &grads, cfg.generator_adam.lr);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn single_mode_without_noise_is_a_point() {
        let d = sample_ring(20, 1, 2.0, 0.0, 1);
        assert!(d.samples.iter().all(|s| s.x == vec![2.0, 0.0]));
        assert_eq!(sample_ring(50, 8, 1.0, 0.1, 3), sample_ring(50, 8, 1.0, 0.1, 3));
    }

    #[test]
    fn estimate_examples() {
        let zero = MlpParams::zeros(&[2, 3, 1], Activation::Tanh).unwrap();
        let pts = vec![vec![1.0, 0.0], vec![0.3, -2.0]];
        assert_eq!(wasserstein_estimate(&zero, &pts, &pts).unwrap(), 0.0);
        // f(x) = x1 through a relu layer that passes positive inputs.
        let f = MlpParams::from_layers(
            vec![
                Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]),
                Matrix::from_rows(&[vec![1.0, -1.0]]),
            ],
            vec![vec![0.0; 2], vec![0.0]],
            Activation::Relu,
        )
        .unwrap();
        let w = wasserstein_estimate(&f, &[vec![1.0, 0.0]], &[vec![-1.0, 0.0]]).unwrap();
        assert!((w - 2.0).abs() < 1e-15);
        assert!(wasserstein_estimate(&f, &[], &pts).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("barrier".parse::<ConstraintMethod>().unwrap(), ConstraintMethod::Barrier);
        assert_eq!(
            "clip".parse::<ConstraintMethod>().unwrap(),
            ConstraintMethod::WeightClip { c: 0.01 }
        );
        assert_eq!(
            "gp:5".parse::<ConstraintMethod>().unwrap(),
            ConstraintMethod::GradientPenalty { mu: 5.0 }
        );
        assert!("clip:x".parse::<ConstraintMethod>().is_err());
    }

    #[test]
    fn clip_bound_closed_form() {
        let b = clip_norm_bound(&[2, 16, 16, 1], 0.01);
        let expected = 0.01 * 32f64.sqrt() * 0.01 * 16.0 * 0.01 * 4.0;
        assert!((b - expected).abs() < 1e-18);
    }

    #[test]
    fn coverage_counts_points_near_modes() {
        let ring = RingSpec::default();
        let pts = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.02]];
        assert!((ring.coverage(&pts) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = GanConfig::barrier();
        assert!(cfg.validate().is_ok());
        cfg.critic_steps = 0;
        assert!(cfg.validate().is_err());
        assert!(GanConfig::weight_clip(0.0).validate().is_err());
    }
}
