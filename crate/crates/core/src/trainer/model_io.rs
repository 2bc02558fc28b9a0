//! JSON model files.
//!
//! Floats are written in shortest round-trip form, so loading reproduces every weight
//! bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::lipschitz::Multipliers;
use crate::nn::{Activation, MlpParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u64 },
    #[error("cannot parse model file: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Free-form facts about how a model was produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    pub lipschitz_target: Option<f64>,
    pub mode: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    dims: Vec<usize>,
    activation: String,
    /// Row-major, one array per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    multipliers: Vec<Vec<f64>>,
    meta: ModelMeta,
}

pub fn model_to_string(p: &MlpParams, m: &Multipliers, meta: &ModelMeta) -> String {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        dims: p.dims.clone(),
        activation: p.activation.to_string(),
        weights: p.weights.iter().map(|w| w.as_slice().to_vec()).collect(),
        biases: p.biases.clone(),
        multipliers: m.lambdas.clone(),
        meta: meta.clone(),
    };
    serde_json::to_string_pretty(&file).expect("model serializes")
}

pub fn model_from_str(text: &str) -> Result<(MlpParams, Multipliers, ModelMeta), ModelIoError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ModelIoError::Parse(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| ModelIoError::Parse("missing format_version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(ModelIoError::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| ModelIoError::Parse(e.to_string()))?;
    let activation: Activation = file
        .activation
        .parse()
        .map_err(|e: crate::nn::NnError| ModelIoError::Parse(e.to_string()))?;
    if file.weights.len() + 1 != file.dims.len() {
        return Err(ModelIoError::Parse("layer count does not match dims".into()));
    }
    let mut weights = Vec::with_capacity(file.weights.len());
    for (i, data) in file.weights.into_iter().enumerate() {
        let (rows, cols) = (file.dims[i + 1], file.dims[i]);
        if data.len() != rows * cols {
            return Err(ModelIoError::Parse(format!("weight {i} has the wrong size")));
        }
        weights.push(Matrix::from_row_major(rows, cols, data));
    }
    let p = MlpParams::from_layers(weights, file.biases, activation)
        .map_err(|e| ModelIoError::Parse(e.to_string()))?;
    let m = Multipliers {
        lambdas: file.multipliers,
    };
    m.check(&p).map_err(|e| ModelIoError::Parse(e.to_string()))?;
    Ok((p, m, file.meta))
}

pub fn save_model(
    path: &Path,
    p: &MlpParams,
    m: &Multipliers,
    meta: &ModelMeta,
) -> Result<(), ModelIoError> {
    fs::write(path, model_to_string(p, m, meta)).map_err(|e| ModelIoError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_model(path: &Path) -> Result<(MlpParams, Multipliers, ModelMeta), ModelIoError> {
    let text = fs::read_to_string(path).map_err(|e| ModelIoError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    model_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut p = MlpParams::glorot(&[3, 5, 2], Activation::LeakyRelu { slope: 0.2 }, &mut rng)
            .unwrap();
        p.biases[0][1] = 1.0 / 3.0;
        let m = Multipliers {
            lambdas: vec![vec![0.1, 2.0 / 7.0, 1e-8, 3.0, 1e300]],
        };
        let meta = ModelMeta {
            lipschitz_target: Some(1.5),
            mode: Some("barrier_bilinear".into()),
            seed: Some(9),
        };
        let (q, n, meta2) = model_from_str(&model_to_string(&p, &m, &meta)).unwrap();
        assert_eq!(q, p);
        assert_eq!(n, m);
        assert_eq!(meta2, meta);
    }

    #[test]
    fn wrong_version_rejected() {
        let p = MlpParams::zeros(&[1, 1, 1], Activation::Tanh).unwrap();
        let text = model_to_string(&p, &Multipliers::identity_for(&p), &ModelMeta::default())
            .replace("\"format_version\": 1", "\"format_version\": 7");
        assert!(matches!(
            model_from_str(&text),
            Err(ModelIoError::VersionMismatch { found: 7, .. })
        ));
        assert!(matches!(model_from_str("{"), Err(ModelIoError::Parse(_))));
    }
}
