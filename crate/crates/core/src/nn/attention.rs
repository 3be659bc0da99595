//! Scaled dot-product attention and its multi-head wrapper.

use rand_chacha::ChaCha8Rng;

use super::graph::{softmax_in_place, Graph, Var};
use super::params::{Bound, Linear, ParamStore};
use super::tensor::Tensor;
use super::NnError;
use crate::scalar::Scalar;

/// `softmax(Q·Kᵀ / sqrt(d_k)) · V` for one head on graph nodes.
///
/// With `causal`, query row `i` only sees key rows `0..=i`.
pub fn attention_node<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var, causal: bool) -> Result<Var, NnError> {
    let (qs, ks, vs) = (g.value(q).shape().to_vec(), g.value(k).shape().to_vec(), g.value(v).shape().to_vec());
    if qs[1] != ks[1] || ks[0] != vs[0] || qs[1] == 0 {
        return Err(NnError::ShapeMismatch(format!("attention Q{qs:?} K{ks:?} V{vs:?}")));
    }
    if causal && qs[0] > ks[0] {
        return Err(NnError::ShapeMismatch(format!("causal attention needs |Q| <= |K|, got Q{qs:?} K{ks:?}")));
    }
    let dk = qs[1];
    let scores = g.matmul_nt(q, k);
    let scores = g.scale(scores, T::one() / T::c(dk as f64).sqrt());
    let scores = if causal { g.causal_mask(scores) } else { scores };
    let weights = g.softmax(scores);
    Ok(g.matmul(weights, v))
}

/// Value-level attention (no gradient tracking).
pub fn attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, causal: bool) -> Result<Tensor<T>, NnError> {
    if q.shape().len() != 2 || k.shape().len() != 2 || v.shape().len() != 2 {
        return Err(NnError::ShapeMismatch("attention expects 2-D Q, K, V".into()));
    }
    let mut g = Graph::new();
    let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let out = attention_node(&mut g, q, k, v, causal)?;
    Ok(g.value(out).clone())
}

/// Softmax of a 2-D tensor along `axis` (0 = down columns, 1 = across rows).
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>, NnError> {
    if x.shape().len() != 2 || axis > 1 {
        return Err(NnError::ShapeMismatch(format!("softmax axis {axis} on {:?}", x.shape())));
    }
    let (r, c) = (x.rows(), x.cols());
    if axis == 1 {
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        return Tensor::new(vec![r, c], data);
    }
    let mut t = super::tensor::transpose(x.data(), r, c);
    for col in t.chunks_mut(r) {
        softmax_in_place(col);
    }
    Tensor::new(vec![r, c], super::tensor::transpose(&t, c, r))
}

/// Multi-head self-attention with fused projections: head `h` owns columns
/// `h*d_k .. (h+1)*d_k` of the query/key/value projections.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        out_scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        if heads == 0 || width % heads != 0 {
            return Err(NnError::Config(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::fan_in(store, &format!("{name}.q"), width, width, rng),
            key: Linear::fan_in(store, &format!("{name}.k"), width, width, rng),
            value: Linear::fan_in(store, &format!("{name}.v"), width, width, rng),
            output: Linear::new(store, &format!("{name}.o"), width, width, out_scale, rng),
            heads,
            width,
        })
    }

    pub fn d_k(&self) -> usize {
        self.width / self.heads
    }

    /// `x` stacks several sequences row-wise; `segments` gives each one's
    /// `(start_row, len)`. Attention never crosses a segment boundary.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var, segments: &[(usize, usize)], causal: bool) -> Var {
        let q_all = self.query.forward(g, p, x);
        let k_all = self.key.forward(g, p, x);
        let v_all = self.value.forward(g, p, x);
        let dk = self.d_k();
        let mut seq_outputs = Vec::with_capacity(segments.len());
        for &(start, len) in segments {
            let (q, k, v) = if segments.len() == 1 && start == 0 && len == g.value(x).rows() {
                (q_all, k_all, v_all)
            } else {
                (g.slice_rows(q_all, start, len), g.slice_rows(k_all, start, len), g.slice_rows(v_all, start, len))
            };
            let mut head_outputs = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let (qh, kh, vh) = if self.heads == 1 {
                    (q, k, v)
                } else {
                    (g.slice_cols(q, h * dk, dk), g.slice_cols(k, h * dk, dk), g.slice_cols(v, h * dk, dk))
                };
                head_outputs.push(attention_node(g, qh, kh, vh, causal).expect("shapes fixed by construction"));
            }
            let merged = if head_outputs.len() == 1 { head_outputs[0] } else { g.concat_cols(&head_outputs) };
            seq_outputs.push(merged);
        }
        let merged = if seq_outputs.len() == 1 { seq_outputs[0] } else { g.concat_rows(&seq_outputs) };
        self.output.forward(g, p, merged)
    }
}
