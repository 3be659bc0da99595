use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::{embed_node, Bound, Embedding, Graph, LayerNorm, NnError, ParamId, ParamStore, TransformerBlock, Var};
use crate::scalar::Scalar;

/// Transformer stack shared by the generator and the evaluator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrunkConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl TrunkConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(ModelError::Config(format!("width {} not divisible by heads {}", self.width, self.heads)));
        }
        if self.layers == 0 || self.vocab_size == 0 || self.max_positions == 0 {
            return Err(ModelError::Config("layers, vocab_size and max_positions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

const EMBED_SCALE: f64 = 0.05;

/// Embeddings, `layers` pre-norm blocks and a final layer norm.
#[derive(Clone, Debug)]
pub struct Trunk {
    pub embedding: Embedding,
    pub segments: Option<ParamId>,
    pub blocks: Vec<TransformerBlock>,
    pub ln_final: LayerNorm,
}

impl Trunk {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        cfg: &TrunkConfig,
        with_segments: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let embedding = Embedding::new(store, "emb", cfg.vocab_size, cfg.max_positions, cfg.width, EMBED_SCALE, rng);
        let segments = with_segments.then(|| store.uniform("emb.seg", &[2, cfg.width], EMBED_SCALE, rng));
        let out_scale = 1.0 / ((cfg.width as f64).sqrt() * (2.0 * cfg.layers as f64).sqrt());
        let blocks = (0..cfg.layers)
            .map(|l| TransformerBlock::new(store, &format!("block{l}"), cfg.width, cfg.heads, out_scale, rng))
            .collect::<Result<Vec<_>, NnError>>()?;
        let ln_final = LayerNorm::new(store, "ln_f", cfg.width);
        Ok(Self { embedding, segments, blocks, ln_final })
    }

    /// Hidden states of several sequences stacked row-wise, plus each
    /// sequence's `(start_row, len)`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        seqs: &[Vec<usize>],
        segment_ids: Option<&[Vec<usize>]>,
        causal: bool,
        dropout: f64,
    ) -> Result<(Var, Vec<(usize, usize)>), ModelError> {
        let mut parts = Vec::with_capacity(seqs.len());
        let mut spans = Vec::with_capacity(seqs.len());
        let mut start = 0;
        for s in seqs {
            parts.push(embed_node(g, s, p[self.embedding.tokens], p[self.embedding.positions])?);
            spans.push((start, s.len()));
            start += s.len();
        }
        let mut x = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
        if let (Some(table), Some(ids)) = (self.segments, segment_ids) {
            let flat: Vec<usize> = ids.iter().flatten().copied().collect();
            let seg = g.gather(p[table], &flat);
            x = g.add(x, seg);
        }
        x = g.dropout(x, dropout);
        for b in &self.blocks {
            x = b.forward(g, p, x, &spans, causal, dropout);
        }
        Ok((self.ln_final.forward(g, p, x), spans))
    }
}
