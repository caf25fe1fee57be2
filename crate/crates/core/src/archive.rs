//! Self-contained model artifact: dimensions, default sub-net, optional
//! training space and every tensor, stored as one JSON file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::weights::{hex, TensorRecord};
use crate::model::{ElasticWeights, ModelConfig, ModelDims};
use crate::nas::SearchSpace;
use crate::scalar::Scalar;

pub const ARTIFACT_FORMAT: &str = "flexdet-artifact/1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Artifact {
    pub format: String,
    pub dims: ModelDims,
    /// Sub-net used when a command gets no explicit config.
    pub config: ModelConfig,
    /// Space the weights were trained under.
    pub space: Option<SearchSpace>,
    pub categories: Vec<String>,
    pub tensors: Vec<TensorRecord>,
}

/// SHA-256 hex digest of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

impl Artifact {
    pub fn new<T: Scalar>(
        weights: &ElasticWeights<T>,
        config: ModelConfig,
        space: Option<SearchSpace>,
        categories: Vec<String>,
    ) -> Self {
        Self {
            format: ARTIFACT_FORMAT.into(),
            dims: weights.dims().clone(),
            config,
            space,
            categories,
            tensors: weights.to_records(),
        }
    }

    pub fn weights<T: Scalar>(&self) -> Result<ElasticWeights<T>> {
        ElasticWeights::from_records(self.dims.clone(), self.tensors.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("artifact serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let a: Artifact =
            serde_json::from_slice(bytes).map_err(|e| Error::InvalidArtifact(format!("not an artifact: {e}")))?;
        if a.format != ARTIFACT_FORMAT {
            return Err(Error::InvalidArtifact(format!("unsupported format `{}`", a.format)));
        }
        a.config.validate(&a.dims)?;
        Ok(a)
    }

    /// Writes the artifact and returns the digest of the bytes written.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    /// Loads an artifact together with the digest of the file content.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_bytes(&bytes)?, sha256_hex(&bytes)))
    }
}
