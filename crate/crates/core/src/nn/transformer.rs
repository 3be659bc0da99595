//! Pre-norm transformer block and token/position embeddings.

use rand_chacha::ChaCha8Rng;

use super::attention::MultiHeadAttention;
use super::graph::{Graph, Var};
use super::params::{Bound, LayerNorm, Linear, ParamId, ParamStore};
use super::tensor::Tensor;
use super::NnError;
use crate::scalar::Scalar;

/// `x + Attn(LN(x))` followed by `x + FFN(LN(x))`, FFN = Linear→GELU→Linear.
#[derive(Clone, Copy, Debug)]
pub struct TransformerBlock {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl TransformerBlock {
    /// `out_scale` bounds the init of the two residual-branch output
    /// projections; 0 makes the block an exact identity.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        out_scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let hidden = 4 * width;
        Ok(Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln1"), width),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, out_scale, rng)?,
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln2"), width),
            ffn_in: Linear::fan_in(store, &format!("{name}.ff1"), width, hidden, rng),
            ffn_out: Linear::new(store, &format!("{name}.ff2"), hidden, width, out_scale, rng),
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        segments: &[(usize, usize)],
        causal: bool,
        dropout: f64,
    ) -> Var {
        let h = self.ln_attn.forward(g, p, x);
        let a = self.attn.forward(g, p, h, segments, causal);
        let a = g.dropout(a, dropout);
        let x = g.add(x, a);
        let h = self.ln_ffn.forward(g, p, x);
        let h = self.ffn_in.forward(g, p, h);
        let h = g.gelu(h);
        let h = self.ffn_out.forward(g, p, h);
        let h = g.dropout(h, dropout);
        g.add(x, h)
    }
}

/// Applies one block to a single `(seq, width)` sequence without tracking.
pub fn transformer_block<T: Scalar>(h: &Tensor<T>, block: &TransformerBlock, params: &ParamStore<T>, causal: bool) -> Result<Tensor<T>, NnError> {
    if h.shape().len() != 2 || h.cols() != block.attn.width {
        return Err(NnError::ShapeMismatch(format!("block width {} got input {:?}", block.attn.width, h.shape())));
    }
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let x = g.constant(h.clone());
    let out = block.forward(&mut g, &p, x, &[(0, h.rows())], causal, 0.0);
    Ok(g.value(out).clone())
}

/// `h_0[i] = W_e[token_i] + W_p[i]` as a graph node.
pub fn embed_node<T: Scalar>(g: &mut Graph<T>, tokens: &[usize], token_table: Var, position_table: Var) -> Result<Var, NnError> {
    let vocab = g.value(token_table).rows();
    let max_pos = g.value(position_table).rows();
    if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(NnError::IdOutOfRange { id: bad, limit: vocab });
    }
    if tokens.len() > max_pos {
        return Err(NnError::IdOutOfRange { id: tokens.len() - 1, limit: max_pos });
    }
    let tok = g.gather(token_table, tokens);
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let pos = g.gather(position_table, &positions);
    Ok(g.add(tok, pos))
}

/// Value-level embedding lookup.
pub fn embed<T: Scalar>(tokens: &[usize], token_table: &Tensor<T>, position_table: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let mut g = Graph::new();
    let we = g.constant(token_table.clone());
    let wp = g.constant(position_table.clone());
    let out = embed_node(&mut g, tokens, we, wp)?;
    Ok(g.value(out).clone())
}

/// Token + position table pair.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub tokens: ParamId,
    pub positions: ParamId,
}

impl Embedding {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, vocab: usize, max_positions: usize, width: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            tokens: store.uniform(&format!("{name}.tok"), &[vocab, width], scale, rng),
            positions: store.uniform(&format!("{name}.pos"), &[max_positions, width], scale, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_output_projections_make_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let block = TransformerBlock::new(&mut store, "b", 8, 2, 0.0, &mut rng).unwrap();
        let h = Tensor::from_f64(&[4, 8], &(0..32).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()).unwrap();
        let out = transformer_block(&h, &block, &store, true).unwrap();
        assert_eq!(out.data(), h.data());
    }

    #[test]
    fn output_shape_matches_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let block = TransformerBlock::new(&mut store, "b", 8, 4, 0.3, &mut rng).unwrap();
        for seq in [1usize, 4, 16] {
            let h = Tensor::full(&[seq, 8], 0.1);
            assert_eq!(transformer_block(&h, &block, &store, true).unwrap().shape(), &[seq, 8]);
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        assert!(TransformerBlock::new(&mut store, "b", 10, 4, 0.1, &mut rng).is_err());
    }

    #[test]
    fn embedding_examples() {
        let we = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let zero_pos = Tensor::zeros(&[4, 2]);
        let e = embed(&[2, 0, 2], &we, &zero_pos).unwrap();
        assert_eq!(e.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);

        let wp = Tensor::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.25], vec![-1.0, 1.0], vec![9.0, 9.0]]);
        let e = embed(&[1, 1], &we, &wp).unwrap();
        assert_eq!(e.at(1, 0) - e.at(0, 0), wp.at(1, 0) - wp.at(0, 0));
        assert_eq!(e.at(1, 1) - e.at(0, 1), wp.at(1, 1) - wp.at(0, 1));

        assert!(matches!(embed(&[3], &we, &wp), Err(NnError::IdOutOfRange { .. })));
        assert!(embed(&[0; 5], &we, &wp).is_err());
    }
}
