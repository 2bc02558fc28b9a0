//! The training loop.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::{ConfigError, TrainConfig, TrainMode};
use super::data::{DataError, Dataset};
use crate::certify::{estimate_lipschitz_with, CertMode};
use crate::lipschitz::{
    barrier_loss_and_grads, bound_at_multipliers, constrained_step, feasible_init, is_feasible,
    optimizer_len, LipschitzError, LipschitzTarget, MultiplierMode, Multipliers, StepConfig,
};
use crate::nn::{accuracy, batch_loss, loss_and_grad, LossKind, MlpParams, NnError, Sample};
use crate::optim::AdamState;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Lipschitz(#[from] LipschitzError),
}

impl TrainError {
    /// Whether the error is a failed feasible initialization.
    pub fn is_init_failure(&self) -> bool {
        matches!(self, TrainError::Lipschitz(LipschitzError::InitFailure { .. }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean task loss over the training split after the epoch.
    pub task_loss: f64,
    /// `-rho * logdet M` after the epoch (barrier modes only).
    pub barrier: Option<f64>,
    pub rho: f64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub feasible: bool,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Smallest `L` certified by the current multipliers.
    pub multiplier_bound: Option<f64>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub mode: TrainMode,
    pub rho0: f64,
    pub epochs: Vec<EpochMetrics>,
    pub certified: Vec<(CertMode, f64)>,
    pub test_accuracy: Option<f64>,
    pub train_seconds: f64,
    pub certify_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,task_loss,barrier,rho,train_accuracy,test_accuracy,feasible,accepted_steps,rejected_steps,multiplier_bound";

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl RunMetrics {
    /// One row per epoch under [`METRICS_HEADER`]. Wall-clock times are left out so that
    /// reruns with the same seed produce identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.task_loss,
                opt_cell(e.barrier),
                e.rho,
                opt_cell(e.train_accuracy),
                opt_cell(e.test_accuracy),
                e.feasible,
                e.accepted_steps,
                e.rejected_steps,
                opt_cell(e.multiplier_bound),
            );
        }
        out
    }

    pub fn certified_bound(&self, mode: CertMode) -> Option<f64> {
        self.certified.iter().find(|(m, _)| *m == mode).map(|(_, b)| *b)
    }

    pub fn final_epoch(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

fn check_shapes(cfg: &TrainConfig, data: &Dataset) -> Result<(), TrainError> {
    data.validate()?;
    let d = data.input_dim().unwrap();
    if cfg.dims[0] != d {
        return Err(ConfigError::Invalid(format!(
            "dims start with {} but the data has {d} inputs",
            cfg.dims[0]
        ))
        .into());
    }
    let out = *cfg.dims.last().unwrap();
    if cfg.loss == LossKind::CrossEntropy {
        match data.num_classes() {
            Some(k) if k <= out => {}
            Some(k) => {
                return Err(ConfigError::Invalid(format!(
                    "{k} classes but only {out} outputs"
                ))
                .into())
            }
            None => {
                return Err(ConfigError::Invalid("cross entropy needs integer labels".into()).into())
            }
        }
    }
    Ok(())
}

fn classification_accuracy(
    p: &MlpParams,
    samples: &[Sample],
    loss: LossKind,
) -> Result<Option<f64>, NnError> {
    if loss != LossKind::CrossEntropy || samples.is_empty() {
        return Ok(None);
    }
    accuracy(p, samples).map(Some)
}

/// Trains a network under `cfg` and certifies the result.
///
/// Barrier modes start from a feasibly scaled Glorot initialization and only ever accept
/// steps whose certificate passes the configured pivot margin.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<(MlpParams, Multipliers, RunMetrics), TrainError> {
    cfg.validate()?;
    check_shapes(cfg, data)?;
    let train_set = data.train();
    let test_set = data.test();
    let start = Instant::now();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = MlpParams::glorot(&cfg.dims, cfg.activation, &mut rng)?;
    let mut m = Multipliers::uniform(p.hidden_dims(), cfg.lambda_init);
    let target = LipschitzTarget::new(cfg.lipschitz)?;
    let mult_mode = match cfg.mode {
        TrainMode::BarrierBilinear => MultiplierMode::Bilinear,
        _ => MultiplierMode::Linear {
            lambda: cfg.lambda_init,
        },
    };
    if cfg.mode.is_barrier() {
        p = feasible_init(&p, &m, target, cfg.margin)?;
    }

    let initial_loss = batch_loss(&p, &train_set, cfg.loss)?;
    let rho0 = cfg.rho0.unwrap_or(1e-3 * initial_loss);
    let mut rho = rho0;
    let mut opt = AdamState::new(optimizer_len(&p, &m, mult_mode), cfg.adam);
    let step_cfg = StepConfig::new(cfg.adam.lr, cfg.margin);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        if epoch > 0 && epoch % cfg.rho_period == 0 {
            rho *= cfg.rho_decay;
        }
        order.shuffle(&mut rng);
        let (mut accepted, mut rejected) = (0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i].clone()));
            let (_, grads) = loss_and_grad(&p, &batch, cfg.loss)?;
            if cfg.mode.is_barrier() {
                let b = barrier_loss_and_grads(&p, &m, target, rho)?;
                let out =
                    constrained_step(&p, &m, target, &grads, &b, &mut opt, mult_mode, &step_cfg);
                if out.accepted {
                    debug_assert!(is_feasible(&out.params, &out.multipliers, target, cfg.margin));
                    p = out.params;
                    m = out.multipliers;
                    accepted += 1;
                } else {
                    rejected += 1;
                }
            } else {
                let mut theta = p.to_flat();
                opt.step(&mut theta, &grads.to_flat(), cfg.adam.lr);
                p.set_from_flat(&theta);
                accepted += 1;
            }
        }

        let barrier = if cfg.mode.is_barrier() {
            Some(barrier_loss_and_grads(&p, &m, target, rho)?.value)
        } else {
            None
        };
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            task_loss: batch_loss(&p, &train_set, cfg.loss)?,
            barrier,
            rho,
            train_accuracy: classification_accuracy(&p, &train_set, cfg.loss)?,
            test_accuracy: classification_accuracy(&p, &test_set, cfg.loss)?,
            feasible: is_feasible(&p, &m, target, cfg.margin),
            accepted_steps: accepted,
            rejected_steps: rejected,
            multiplier_bound: bound_at_multipliers(&p, &m),
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} loss {:.5} rho {:.3e} acc {:?} bound {:?}",
            metrics.epoch,
            metrics.task_loss,
            rho,
            metrics.test_accuracy.or(metrics.train_accuracy),
            metrics.multiplier_bound
        );
        epochs.push(metrics);
    }
    let train_seconds = start.elapsed().as_secs_f64();

    let cert_start = Instant::now();
    let warm = cfg.mode.is_barrier().then_some(&m);
    let certified = cfg
        .certify
        .iter()
        .map(|&mode| (mode, estimate_lipschitz_with(&p, mode, cfg.cert_tol, warm).bound))
        .collect();
    let metrics = RunMetrics {
        mode: cfg.mode,
        rho0,
        epochs,
        certified,
        test_accuracy: classification_accuracy(&p, &test_set, cfg.loss)?,
        train_seconds,
        certify_seconds: cert_start.elapsed().as_secs_f64(),
    };
    Ok((p, m, metrics))
}
