//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and enough cached state to run its backward rule. Nodes are tracked
//! when they are parameters or depend on one; untracked nodes never receive a
//! gradient buffer. Call [`Graph::backward`] on a scalar node, then read
//! gradients with [`Graph::grad`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{mm_nn, mm_nt, mm_tn, transpose, Tensor};
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    CausalMask(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    Dropout { x: Var, mask: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<T>, probs: Vec<T>, norm: T },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    rng: Option<ChaCha8Rng>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.044_715;

impl<T: Scalar> Graph<T> {
    /// Inference graph: dropout is the identity.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), rng: None }
    }

    /// Training graph: dropout draws masks from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Returns the generator so a training loop can keep one stream across steps.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn shape2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(to_2d(t), Op::Leaf, false)
    }

    /// Tracked leaf (receives a gradient).
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(to_2d(t), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient as a tensor shaped like the node (zeros if none reached it).
    pub fn grad_tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.nodes[v.0].value.shape().to_vec();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }

    // ---------------------------------------------------------------- ops

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).unwrap();
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, op, tracked)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.nodes[a.0].value.map(|x| x * s);
        let tracked = self.tracked(a);
        self.push(value, Op::Scale(a, s), tracked)
    }

    /// `x (n,m) + b (1,m)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (n, m) = self.shape2(x);
        assert_eq!(self.nodes[b.0].value.numel(), m, "bias width mismatch");
        let bias = self.nodes[b.0].value.data();
        let mut data = self.nodes[x.0].value.data().to_vec();
        for r in 0..n {
            for (o, &bv) in data[r * m..(r + 1) * m].iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let tracked = self.tracked(x) || self.tracked(b);
        self.push(Tensor::new(vec![n, m], data).unwrap(), Op::AddRow(x, b), tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape2(a);
        let (k2, m) = self.shape2(b);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = vec![T::zero(); n * m];
        mm_nn(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), &mut out, n, k, m);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Tensor::new(vec![n, m], out).unwrap(), Op::MatMul(a, b), tracked)
    }

    /// `a (n,k) · b (m,k)ᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape2(a);
        let (m, k2) = self.shape2(b);
        assert_eq!(k, k2, "matmul_nt inner dimension mismatch");
        let mut out = vec![T::zero(); n * m];
        mm_nt(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), &mut out, n, k, m);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Tensor::new(vec![n, m], out).unwrap(), Op::MatMulNT(a, b), tracked)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (n, m) = self.shape2(a);
        let data = transpose(self.nodes[a.0].value.data(), n, m);
        let tracked = self.tracked(a);
        self.push(Tensor::new(vec![m, n], data).unwrap(), Op::Transpose(a), tracked)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(sigmoid);
        let tracked = self.tracked(a);
        self.push(value, Op::Sigmoid(a), tracked)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.tanh());
        let tracked = self.tracked(a);
        self.push(value, Op::Tanh(a), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.max(T::zero()));
        let tracked = self.tracked(a);
        self.push(value, Op::Relu(a), tracked)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let s = T::c((2.0 / std::f64::consts::PI).sqrt());
        let c = T::c(GELU_C);
        let value = self.nodes[a.0]
            .value
            .map(|x| T::half() * x * (T::one() + (s * (x + c * x * x * x)).tanh()));
        let tracked = self.tracked(a);
        self.push(value, Op::Gelu(a), tracked)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (n, m) = self.shape2(a);
        let mut data = self.nodes[a.0].value.data().to_vec();
        for r in 0..n {
            softmax_in_place(&mut data[r * m..(r + 1) * m]);
        }
        let tracked = self.tracked(a);
        self.push(Tensor::new(vec![n, m], data).unwrap(), Op::Softmax(a), tracked)
    }

    /// Sets entry (i, j) to −∞ for every j > i.
    pub fn causal_mask(&mut self, a: Var) -> Var {
        let (n, m) = self.shape2(a);
        let mut data = self.nodes[a.0].value.data().to_vec();
        for i in 0..n {
            for x in data[i * m..(i + 1) * m].iter_mut().skip(i + 1) {
                *x = T::neg_infinity();
            }
        }
        let tracked = self.tracked(a);
        self.push(Tensor::new(vec![n, m], data).unwrap(), Op::CausalMask(a), tracked)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let (n, m) = self.shape2(x);
        assert_eq!(self.nodes[gamma.0].value.numel(), m);
        assert_eq!(self.nodes[beta.0].value.numel(), m);
        let xs = self.nodes[x.0].value.data();
        let g = self.nodes[gamma.0].value.data();
        let b = self.nodes[beta.0].value.data();
        let mut xhat = vec![T::zero(); n * m];
        let mut rstd = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * m];
        let mf = T::c(m as f64);
        for r in 0..n {
            let row = &xs[r * m..(r + 1) * m];
            let mean = row.iter().copied().sum::<T>() / mf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..m {
                let h = (row[c] - mean) * rs;
                xhat[r * m + c] = h;
                out[r * m + c] = h * g[c] + b[c];
            }
        }
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        self.push(
            Tensor::new(vec![n, m], out).unwrap(),
            Op::LayerNorm { x, gamma, beta, xhat, rstd },
            tracked,
        )
    }

    /// Row gather: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, d) = self.shape2(table);
        let src = self.nodes[table.0].value.data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "gather id {id} out of range {v}");
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let tracked = self.tracked(table);
        self.push(
            Tensor::new(vec![ids.len(), d], out).unwrap(),
            Op::Gather { table, ids: ids.to_vec() },
            tracked,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, m) = self.shape2(x);
        assert!(start + len <= m);
        let src = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&src[r * m + start..r * m + start + len]);
        }
        let tracked = self.tracked(x);
        self.push(Tensor::new(vec![n, len], out).unwrap(), Op::SliceCols { x, start }, tracked)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.shape2(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape2(p);
                assert_eq!(r, n, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[p.0].value.data()[r * w..(r + 1) * w]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(Tensor::new(vec![n, total], out).unwrap(), Op::ConcatCols(parts.to_vec()), tracked)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, m) = self.shape2(x);
        assert!(start + len <= n);
        let out = self.nodes[x.0].value.data()[start * m..(start + len) * m].to_vec();
        let tracked = self.tracked(x);
        self.push(Tensor::new(vec![len, m], out).unwrap(), Op::SliceRows { x, start }, tracked)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let m = self.shape2(parts[0]).1;
        let mut out = Vec::new();
        let mut n = 0;
        for &p in parts {
            let (r, c) = self.shape2(p);
            assert_eq!(c, m, "concat_rows column mismatch");
            n += r;
            out.extend_from_slice(self.nodes[p.0].value.data());
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(Tensor::new(vec![n, m], out).unwrap(), Op::ConcatRows(parts.to_vec()), tracked)
    }

    /// Inverted dropout. Identity on inference graphs and for `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        let keep = T::c(1.0 / (1.0 - rate));
        let n = self.nodes[x.0].value.numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().zip(&mask).map(|(&v, &k)| v * k).collect();
        let value = Tensor::new(src.shape().to_vec(), data).unwrap();
        let tracked = self.tracked(x);
        self.push(value, Op::Dropout { x, mask }, tracked)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, over rows where `active` is true. Returns `None` when no row
    /// is active.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], active: &[bool]) -> Option<Var> {
        let weights: Vec<f64> = active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        self.weighted_cross_entropy(logits, targets, &weights)
    }

    /// `Σ w_r·nll_r / Σ w_r`. Rows with zero weight are skipped. Returns
    /// `None` when every weight is zero.
    pub fn weighted_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Option<Var> {
        let (n, c) = self.shape2(logits);
        assert_eq!(targets.len(), n);
        assert_eq!(weights.len(), n);
        let norm: f64 = weights.iter().sum();
        if !(norm > 0.0) {
            return None;
        }
        let mut probs = self.nodes[logits.0].value.data().to_vec();
        let mut total = T::zero();
        for r in 0..n {
            let row = &mut probs[r * c..(r + 1) * c];
            let lse = log_sum_exp(row);
            if weights[r] != 0.0 {
                assert!(targets[r] < c, "target {} out of range {c}", targets[r]);
                total += T::c(weights[r]) * (lse - row[targets[r]]);
            }
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let norm = T::c(norm);
        let loss = total / norm;
        let tracked = self.tracked(logits);
        let weights = weights.iter().map(|&w| T::c(w)).collect();
        Some(self.push(
            Tensor::new(vec![1, 1], vec![loss]).unwrap(),
            Op::CrossEntropy { logits, targets: targets.to_vec(), weights, probs, norm },
            tracked,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().copied().sum::<T>();
        let tracked = self.tracked(x);
        self.push(Tensor::new(vec![1, 1], vec![s]).unwrap(), Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let s = v.data().iter().copied().sum::<T>() / T::c(v.numel() as f64);
        let tracked = self.tracked(x);
        self.push(Tensor::new(vec![1, 1], vec![s]).unwrap(), Op::Mean(x), tracked)
    }

    /// Mean of several scalar nodes.
    pub fn mean_of(&mut self, xs: &[Var]) -> Var {
        let stacked = self.concat_rows(xs);
        self.mean(stacked)
    }

    // ----------------------------------------------------------- backward

    /// Reverse sweep from the scalar `root`. Gradients of earlier backward
    /// calls are cleared first.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.nodes[root.0].value.numel(), 1, "backward needs a scalar root");
        for g in &mut self.grads {
            *g = None;
        }
        if !self.tracked(root) {
            return;
        }
        self.grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            backprop_node(&self.nodes, &mut self.grads, i, &g);
            self.grads[i] = Some(g);
        }
    }
}

fn to_2d<T: Scalar>(t: Tensor<T>) -> Tensor<T> {
    if t.shape().len() == 2 {
        t
    } else {
        let (r, c) = (t.rows(), t.cols());
        t.reshape(&[r, c]).unwrap()
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn acc<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
    if !nodes[v.0].tracked {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
    f(buf);
}

fn backprop_node<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], i: usize, g: &[T]) {
    let node = &nodes[i];
    let y = node.value.data();
    let val = |v: Var| nodes[v.0].value.data();
    let dims = |v: Var| (nodes[v.0].value.rows(), nodes[v.0].value.cols());
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc(nodes, grads, *a, |d| add_into(d, g));
            acc(nodes, grads, *b, |d| add_into(d, g));
        }
        Op::Sub(a, b) => {
            acc(nodes, grads, *a, |d| add_into(d, g));
            acc(nodes, grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            acc(nodes, grads, *a, |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * vb[k];
                }
            });
            acc(nodes, grads, *b, |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * va[k];
                }
            });
        }
        Op::Scale(a, s) => acc(nodes, grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *s)),
        Op::AddRow(x, b) => {
            acc(nodes, grads, *x, |d| add_into(d, g));
            let m = node.value.cols();
            acc(nodes, grads, *b, |d| {
                for row in g.chunks(m) {
                    add_into(d, row);
                }
            });
        }
        Op::MatMul(a, b) => {
            let (n, k) = dims(*a);
            let m = dims(*b).1;
            let (va, vb) = (val(*a), val(*b));
            // dA = G·Bᵀ, dB = Aᵀ·G
            acc(nodes, grads, *a, |d| mm_nt(g, vb, d, n, m, k));
            acc(nodes, grads, *b, |d| mm_tn(va, g, d, n, k, m));
        }
        Op::MatMulNT(a, b) => {
            let (n, k) = dims(*a);
            let m = dims(*b).0;
            let (va, vb) = (val(*a), val(*b));
            // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
            acc(nodes, grads, *a, |d| mm_nn(g, vb, d, n, m, k));
            acc(nodes, grads, *b, |d| mm_tn(g, va, d, n, m, k));
        }
        Op::Transpose(a) => {
            let (n, m) = dims(*a);
            let gt = transpose(g, m, n);
            acc(nodes, grads, *a, |d| add_into(d, &gt));
        }
        Op::Sigmoid(a) => acc(nodes, grads, *a, |d| {
            for k in 0..d.len() {
                d[k] += g[k] * y[k] * (T::one() - y[k]);
            }
        }),
        Op::Tanh(a) => acc(nodes, grads, *a, |d| {
            for k in 0..d.len() {
                d[k] += g[k] * (T::one() - y[k] * y[k]);
            }
        }),
        Op::Relu(a) => {
            let x = val(*a);
            acc(nodes, grads, *a, |d| {
                for k in 0..d.len() {
                    if x[k] > T::zero() {
                        d[k] += g[k];
                    }
                }
            })
        }
        Op::Gelu(a) => {
            let x = val(*a);
            let s = T::c((2.0 / std::f64::consts::PI).sqrt());
            let c = T::c(GELU_C);
            let three = T::c(3.0);
            acc(nodes, grads, *a, |d| {
                for k in 0..d.len() {
                    let xv = x[k];
                    let t = (s * (xv + c * xv * xv * xv)).tanh();
                    let dt = (T::one() - t * t) * s * (T::one() + three * c * xv * xv);
                    d[k] += g[k] * (T::half() * (T::one() + t) + T::half() * xv * dt);
                }
            })
        }
        Op::Softmax(a) => {
            let m = node.value.cols();
            acc(nodes, grads, *a, |d| {
                for ((dr, gr), yr) in d.chunks_mut(m).zip(g.chunks(m)).zip(y.chunks(m)) {
                    let dot: T = gr.iter().zip(yr).map(|(&g, &y)| g * y).sum();
                    for k in 0..m {
                        dr[k] += yr[k] * (gr[k] - dot);
                    }
                }
            })
        }
        Op::CausalMask(a) => {
            let m = node.value.cols();
            acc(nodes, grads, *a, |d| {
                for (i, (dr, gr)) in d.chunks_mut(m).zip(g.chunks(m)).enumerate() {
                    for k in 0..m.min(i + 1) {
                        dr[k] += gr[k];
                    }
                }
            })
        }
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            let m = node.value.cols();
            let gam = val(*gamma);
            acc(nodes, grads, *gamma, |d| {
                for (gr, hr) in g.chunks(m).zip(xhat.chunks(m)) {
                    for k in 0..m {
                        d[k] += gr[k] * hr[k];
                    }
                }
            });
            acc(nodes, grads, *beta, |d| {
                for gr in g.chunks(m) {
                    add_into(d, gr);
                }
            });
            let mf = T::c(m as f64);
            acc(nodes, grads, *x, |d| {
                for (r, ((dr, gr), hr)) in d.chunks_mut(m).zip(g.chunks(m)).zip(xhat.chunks(m)).enumerate() {
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for k in 0..m {
                        let dh = gr[k] * gam[k];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[k];
                    }
                    mean_dh /= mf;
                    mean_dh_h /= mf;
                    for k in 0..m {
                        let dh = gr[k] * gam[k];
                        dr[k] += rstd[r] * (dh - mean_dh - hr[k] * mean_dh_h);
                    }
                }
            });
        }
        Op::Gather { table, ids } => {
            let d_cols = node.value.cols();
            acc(nodes, grads, *table, |d| {
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut d[id * d_cols..(id + 1) * d_cols], &g[r * d_cols..(r + 1) * d_cols]);
                }
            })
        }
        Op::SliceCols { x, start } => {
            let len = node.value.cols();
            let m = dims(*x).1;
            acc(nodes, grads, *x, |d| {
                for (r, gr) in g.chunks(len).enumerate() {
                    add_into(&mut d[r * m + start..r * m + start + len], gr);
                }
            })
        }
        Op::ConcatCols(parts) => {
            let total = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let w = dims(p).1;
                acc(nodes, grads, p, |d| {
                    for (r, dr) in d.chunks_mut(w).enumerate() {
                        add_into(dr, &g[r * total + offset..r * total + offset + w]);
                    }
                });
                offset += w;
            }
        }
        Op::SliceRows { x, start } => {
            let m = node.value.cols();
            acc(nodes, grads, *x, |d| add_into(&mut d[start * m..start * m + g.len()], g));
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p.0].value.numel();
                acc(nodes, grads, p, |d| add_into(d, &g[offset..offset + n]));
                offset += n;
            }
        }
        Op::Dropout { x, mask } => acc(nodes, grads, *x, |d| {
            for k in 0..d.len() {
                d[k] += g[k] * mask[k];
            }
        }),
        Op::CrossEntropy { logits, targets, weights, probs, norm } => {
            let c = dims(*logits).1;
            acc(nodes, grads, *logits, |d| {
                for (r, &t) in targets.iter().enumerate() {
                    if weights[r] == T::zero() {
                        continue;
                    }
                    let scale = g[0] * weights[r] / *norm;
                    let dr = &mut d[r * c..(r + 1) * c];
                    let pr = &probs[r * c..(r + 1) * c];
                    for k in 0..c {
                        dr[k] += scale * pr[k];
                    }
                    dr[t] -= scale;
                }
            })
        }
        Op::Sum(x) => acc(nodes, grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0])),
        Op::Mean(x) => {
            let n = T::c(nodes[x.0].value.numel() as f64);
            acc(nodes, grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0] / n))
        }
    }
}

#[inline]
fn add_into<T: Scalar>(d: &mut [T], g: &[T]) {
    for (d, &g) in d.iter_mut().zip(g) {
        *d += g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows)
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[vec![3.0]]));
        let y = g.mul(x, x);
        g.backward(y);
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[vec![1.0, 2.0]]));
        let c = g.constant(t(&[vec![5.0, 7.0]]));
        let y = g.mul(x, c);
        let s = g.sum(y);
        g.backward(s);
        assert_eq!(g.grad(x).unwrap(), &[5.0, 7.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn dropout_is_identity_in_inference_and_at_rate_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[vec![1.0, 2.0, 3.0]]));
        assert_eq!(g.dropout(x, 0.2), x);
        let mut g = Graph::<f64>::training(ChaCha8Rng::seed_from_u64(1));
        let x = g.param(t(&[vec![1.0, 2.0, 3.0]]));
        assert_eq!(g.dropout(x, 0.0), x);
        let y = g.dropout(x, 0.5);
        for (&a, &b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!(a == 0.0 || a == 2.0 * b);
        }
    }

    #[test]
    fn cross_entropy_all_masked_is_none() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(t(&[vec![0.0, 1.0]]));
        assert!(g.cross_entropy(l, &[0], &[false]).is_none());
    }
}
