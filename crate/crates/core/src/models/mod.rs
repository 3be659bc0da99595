//! The three models: next-packet generator (causal LM), packet-pair
//! evaluator (bidirectional encoder) and the LSTM intrusion classifier.

pub mod bert;
pub mod gpt;
pub mod lstm;
mod trunk;

use thiserror::Error;

use crate::features::FeatureError;
use crate::nn::NnError;
use crate::text::TextError;

pub use trunk::{Trunk, TrunkConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("window of {len} tokens exceeds max_positions {max}")]
    WindowTooLong { len: usize, max: usize },
    #[error("pair of {len} tokens exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("no maskable tokens in batch")]
    NothingToMask,
    #[error("need at least {needed} flows with 2+ packets, found {found}")]
    InsufficientFlows { needed: usize, found: usize },
    #[error("label id {id} outside {classes} classes")]
    LabelOutOfRange { id: usize, classes: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty dataset: {0}")]
    EmptyData(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Shared optimisation settings for the transformer models.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { max_epochs: 30, patience: 3, batch_size: 32, lr: 3e-3, clip_norm: Some(1.0) }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> crate::nn::AdamConfig {
        crate::nn::AdamConfig { lr: self.lr, clip_norm: self.clip_norm, ..Default::default() }
    }
}
