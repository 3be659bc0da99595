//! Numeric substrate: tensors, reverse-mode autodiff, attention, transformer
//! blocks, the LSTM cell, cross-entropy, Adam, gradient checking and
//! checkpoints.

mod adam;
mod attention;
mod checkpoint;
mod gradcheck;
mod graph;
mod lstm;
mod params;
mod tensor;
mod train;
mod transformer;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attention::{attention, attention_node, softmax, MultiHeadAttention};
pub use checkpoint::{config_hash, hex_digest, Checkpoint, NamedTensor, CHECKPOINT_FORMAT};
pub use gradcheck::grad_check;
pub use graph::{Graph, Var};
pub use lstm::{lstm_cell, LstmParams, LstmStep, LstmWeights, GATES};
pub use params::{Bound, LayerNorm, Linear, ParamId, ParamStore};
pub use tensor::Tensor;
pub use train::{fit_with_early_stopping, EarlyStopping, EpochRunner, History, StopDecision};
pub use transformer::{embed, embed_node, transformer_block, Embedding, TransformerBlock};

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("id {id} out of range (limit {limit})")]
    IdOutOfRange { id: usize, limit: usize },
    #[error("every position is masked")]
    AllMasked,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config hash mismatch: model expects {expected}, checkpoint has {found}")]
    ConfigHashMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// `−mean log softmax(logits)[target]` over rows where `ignore[r]` is false.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize], ignore: &[bool]) -> Result<T, NnError> {
    if logits.rows() != targets.len() || targets.len() != ignore.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} logit rows, {} targets, {} mask entries",
            logits.rows(),
            targets.len(),
            ignore.len()
        )));
    }
    if let Some(&t) = targets.iter().zip(ignore).find(|(&t, &ig)| !ig && t >= logits.cols()).map(|(t, _)| t) {
        return Err(NnError::IdOutOfRange { id: t, limit: logits.cols() });
    }
    let active: Vec<bool> = ignore.iter().map(|&m| !m).collect();
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = g.cross_entropy(l, targets, &active).ok_or(NnError::AllMasked)?;
    Ok(g.scalar(loss))
}
