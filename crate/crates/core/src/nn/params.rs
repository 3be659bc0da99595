use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

/// Parameters bound into one graph as tracked leaves.
pub struct Bound(Vec<Var>);

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl Bound {
    /// Wraps leaves created elsewhere, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform in `[-scale, scale]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::c(rng.gen_range(-scale..=scale))).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).unwrap())
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::full(shape, T::one()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Binds every parameter as a tracked leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound(self.tensors.iter().map(|t| g.param(t.clone())).collect())
    }

    /// Binds every parameter as a constant (inference, no gradients).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound(self.tensors.iter().map(|t| g.constant(t.clone())).collect())
    }

    pub fn collect_grads(&self, g: &Graph<T>, bound: &Bound) -> Vec<Tensor<T>> {
        bound.0.iter().zip(&self.tensors).map(|(&v, t)| {
            g.grad_tensor(v).reshape(t.shape()).expect("grad shape")
        }).collect()
    }
}

/// Affine map `x·W + b` with `W: (in, out)`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, inp: usize, out: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let w = store.uniform(&format!("{name}.w"), &[inp, out], scale, rng);
        let b = store.zeros(&format!("{name}.b"), &[1, out]);
        Self { w, b }
    }

    /// Uniform init with bound 1/sqrt(fan_in).
    pub fn fan_in<T: Scalar>(store: &mut ParamStore<T>, name: &str, inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(store, name, inp, out, 1.0 / (inp as f64).sqrt(), rng)
    }

    pub fn zeroed<T: Scalar>(store: &mut ParamStore<T>, name: &str, inp: usize, out: usize) -> Self {
        let w = store.zeros(&format!("{name}.w"), &[inp, out]);
        let b = store.zeros(&format!("{name}.b"), &[1, out]);
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let h = g.matmul(x, p[self.w]);
        g.add_row(h, p[self.b])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        let gamma = store.ones(&format!("{name}.gamma"), &[1, width]);
        let beta = store.zeros(&format!("{name}.beta"), &[1, width]);
        Self { gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        g.layer_norm(x, p[self.gamma], p[self.beta], T::c(Self::EPS))
    }
}
