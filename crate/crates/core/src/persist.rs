//! Versioned JSON records for trained networks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVariant, Featurizer, Standardizer};
use crate::nn::{Dense, Mlp};

pub const MODEL_RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Embedder,
    Detector,
}

/// On-disk form of a network together with the feature pipeline it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub version: u32,
    pub kind: ModelKind,
    pub variant: FeatureVariant,
    pub window_len: usize,
    /// Layer shapes, row-major `outputs × inputs` weights, and biases.
    pub layers: Vec<Dense>,
    pub normalization: Option<Standardizer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl ModelRecord {
    pub fn new(kind: ModelKind, net: &Mlp, featurizer: &Featurizer, threshold: Option<f64>) -> Self {
        Self {
            version: MODEL_RECORD_VERSION,
            kind,
            variant: featurizer.variant,
            window_len: featurizer.window_len,
            layers: net.layers.clone(),
            normalization: featurizer.scaler.clone(),
            threshold,
        }
    }

    /// Validates the record and splits it back into network and featurizer.
    pub fn into_parts(self, expected: ModelKind) -> Result<(Mlp, Featurizer, Option<f64>)> {
        if self.version != MODEL_RECORD_VERSION {
            return Err(Error::Schema(format!("unsupported model record version {}", self.version)));
        }
        if self.kind != expected {
            return Err(Error::Schema(format!("expected a {expected:?} record, found {:?}", self.kind)));
        }
        let net = Mlp { layers: self.layers };
        net.validate()?;
        let dim = self.variant.dim(self.window_len);
        if net.input_dim() != dim {
            return Err(Error::Shape { expected: dim, actual: net.input_dim() });
        }
        if let Some(s) = &self.normalization {
            if s.dim() != dim || s.std.len() != dim {
                return Err(Error::Schema("normalization length does not match feature variant".into()));
            }
        }
        let featurizer = Featurizer {
            variant: self.variant,
            window_len: self.window_len,
            scaler: self.normalization,
        };
        Ok((net, featurizer, self.threshold))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("model record: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
