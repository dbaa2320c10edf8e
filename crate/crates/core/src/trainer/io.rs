//! Versioned JSON persistence for trained models.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Model;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format version {found} (expected {MODEL_FORMAT_VERSION})")]
    Version { found: u32 },
}

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    format_version: u32,
    model: M,
}

pub fn to_json(model: &Model) -> Result<String, ModelIoError> {
    Ok(serde_json::to_string(&Envelope { format_version: MODEL_FORMAT_VERSION, model })?)
}

pub fn from_json(s: &str) -> Result<Model, ModelIoError> {
    #[derive(Deserialize)]
    struct Version {
        format_version: u32,
    }
    let v: Version = serde_json::from_str(s)?;
    if v.format_version != MODEL_FORMAT_VERSION {
        return Err(ModelIoError::Version { found: v.format_version });
    }
    let env: Envelope<Model> = serde_json::from_str(s)?;
    Ok(env.model)
}

pub fn save(model: &Model, path: &Path) -> Result<(), ModelIoError> {
    let s = to_json(model)?;
    std::fs::write(path, s).map_err(|source| ModelIoError::Io { path: path.display().to_string(), source })
}

pub fn load(path: &Path) -> Result<Model, ModelIoError> {
    let s = std::fs::read_to_string(path).map_err(|source| ModelIoError::Io { path: path.display().to_string(), source })?;
    from_json(&s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{Arch, Classifier, Network, Platt};

    #[test]
    fn round_trip_is_exact() {
        let net = Network {
            arch: Arch::Mlp { hidden_units: 2 },
            input_dim: 2,
            params: vec![0.1, -1.0 / 3.0, 2.5e-300, 7.0, -0.0, 1e17, 0.3],
        };
        let m = Model::Plain(Classifier { network: net, calibration: Some(Platt { a: 0.7, b: -0.1 }) });
        let back = from_json(&to_json(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn wrong_version_rejected() {
        let err = from_json(r#"{"format_version": 99, "model": {}}"#).unwrap_err();
        assert!(matches!(err, ModelIoError::Version { found: 99 }));
    }
}
