//! Training configuration and its `key = value` file format.
//!
//! Recognized keys (all optional):
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `dims` | comma-separated widths `n_0,...,n_{l+1}` | `2,10,10,3` |
//! | `activation` | `tanh`, `relu`, `sigmoid`, `leaky_relu[:slope]` | `tanh` |
//! | `loss` | `cross_entropy`, `mse` | `cross_entropy` |
//! | `mode` | `nominal`, `barrier_linear`, `barrier_bilinear` | `barrier_bilinear` |
//! | `lipschitz` | enforced bound `L` | `50` |
//! | `rho0` | initial barrier weight, or `auto` for `1e-3` times the initial loss | `auto` |
//! | `rho_decay`, `rho_period` | multiply `rho` by `rho_decay` every `rho_period` epochs | `0.8`, `10` |
//! | `lr`, `beta1`, `beta2`, `eps` | Adam | `1e-2`, `0.9`, `0.999`, `1e-8` |
//! | `epochs`, `batch_size`, `seed` | | `400`, `32`, `0` |
//! | `margin` | relative Cholesky pivot margin for accepted steps | `1e-9` |
//! | `lambda_init` | initial (or, in linear mode, fixed) multiplier value | `1` |
//! | `certify` | comma-separated modes evaluated after training | `full_diag` |
//! | `cert_tol` | relative bisection tolerance | `1e-3` |
//! | `image_size` | pooled side length for IDX directories | `14` |
//! | `train_limit`, `test_limit` | samples kept from IDX directories | `10000`, `10000` |
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::certify::CertMode;
use crate::nn::{Activation, LossKind};
use crate::optim::AdamConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Nominal,
    BarrierLinear,
    BarrierBilinear,
}

impl TrainMode {
    pub fn is_barrier(self) -> bool {
        self != TrainMode::Nominal
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Nominal => "nominal",
            TrainMode::BarrierLinear => "barrier_linear",
            TrainMode::BarrierBilinear => "barrier_bilinear",
        })
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().replace('-', "_").as_str() {
            "nominal" => Ok(TrainMode::Nominal),
            "barrier_linear" | "linear" => Ok(TrainMode::BarrierLinear),
            "barrier_bilinear" | "bilinear" => Ok(TrainMode::BarrierBilinear),
            other => Err(format!("unknown training mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    pub mode: TrainMode,
    pub lipschitz: f64,
    /// `None` means `1e-3` times the initial task loss.
    pub rho0: Option<f64>,
    pub rho_decay: f64,
    pub rho_period: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub margin: f64,
    pub lambda_init: f64,
    pub certify: Vec<CertMode>,
    pub cert_tol: f64,
    pub image_size: usize,
    pub train_limit: usize,
    pub test_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dims: vec![2, 10, 10, 3],
            activation: Activation::Tanh,
            loss: LossKind::CrossEntropy,
            mode: TrainMode::BarrierBilinear,
            lipschitz: 50.0,
            rho0: None,
            rho_decay: 0.8,
            rho_period: 10,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            epochs: 400,
            batch_size: 32,
            seed: 0,
            margin: 1e-9,
            lambda_init: 1.0,
            certify: vec![CertMode::FullDiag],
            cert_tol: 1e-3,
            image_size: 14,
            train_limit: 10_000,
            test_limit: 10_000,
        }
    }
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<T>().map_err(|e| format!("`{}`: {e}", s.trim())))
        .collect()
}

fn parse_one<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

impl TrainConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "dims" => self.dims = parse_list(v)?,
            "activation" => self.activation = parse_one(v)?,
            "loss" => self.loss = parse_one(v)?,
            "mode" => self.mode = parse_one(v)?,
            "lipschitz" => self.lipschitz = parse_one(v)?,
            "rho0" => self.rho0 = if v == "auto" { None } else { Some(parse_one(v)?) },
            "rho_decay" => self.rho_decay = parse_one(v)?,
            "rho_period" => self.rho_period = parse_one(v)?,
            "lr" => self.adam.lr = parse_one(v)?,
            "beta1" => self.adam.beta1 = parse_one(v)?,
            "beta2" => self.adam.beta2 = parse_one(v)?,
            "eps" => self.adam.eps = parse_one(v)?,
            "epochs" => self.epochs = parse_one(v)?,
            "batch_size" => self.batch_size = parse_one(v)?,
            "seed" => self.seed = parse_one(v)?,
            "margin" => self.margin = parse_one(v)?,
            "lambda_init" => self.lambda_init = parse_one(v)?,
            "certify" => self.certify = parse_list(v)?,
            "cert_tol" => self.cert_tol = parse_one(v)?,
            "image_size" => self.image_size = parse_one(v)?,
            "train_limit" => self.train_limit = parse_one(v)?,
            "test_limit" => self.test_limit = parse_one(v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(k, v).map_err(|message| ConfigError::Parse {
                line: i + 1,
                message,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return bad("dims needs at least two positive widths");
        }
        if let Some(r) = self.rho0 {
            if !(r > 0.0) {
                return bad("rho0 must be positive");
            }
        }
        if !(self.rho_decay > 0.0 && self.rho_decay <= 1.0) {
            return bad("rho_decay must lie in (0, 1]");
        }
        if self.rho_period == 0 {
            return bad("rho_period must be positive");
        }
        if !(self.adam.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.lipschitz > 0.0) {
            return bad("lipschitz must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.margin >= 0.0) {
            return bad("margin must be nonnegative");
        }
        if !(self.lambda_init > 0.0) {
            return bad("lambda_init must be positive");
        }
        if !(self.cert_tol > 0.0) {
            return bad("cert_tol must be positive");
        }
        Ok(())
    }

    /// The configuration in the file format accepted by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let lines = [
            ("dims", join(self.dims.iter().map(|d| d.to_string()).collect())),
            ("activation", self.activation.to_string()),
            ("loss", self.loss.to_string()),
            ("mode", self.mode.to_string()),
            ("lipschitz", self.lipschitz.to_string()),
            ("rho0", self.rho0.map_or("auto".into(), |r| r.to_string())),
            ("rho_decay", self.rho_decay.to_string()),
            ("rho_period", self.rho_period.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("eps", self.adam.eps.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("margin", self.margin.to_string()),
            ("lambda_init", self.lambda_init.to_string()),
            ("certify", join(self.certify.iter().map(|c| c.to_string()).collect())),
            ("cert_tol", self.cert_tol.to_string()),
            ("image_size", self.image_size.to_string()),
            ("train_limit", self.train_limit.to_string()),
            ("test_limit", self.test_limit.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
