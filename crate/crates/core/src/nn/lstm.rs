//! LSTM cell.
//!
//! ```text
//! i = σ(x·W_i + h·U_i + b_i)      f = σ(x·W_f + h·U_f + b_f)
//! o = σ(x·W_o + h·U_o + b_o)      g = tanh(x·W_g + h·U_g + b_g)
//! c' = f ⊙ c + i ⊙ g              h' = o ⊙ tanh(c')
//! ```
//! Rows are batch entries: `x: (batch, input)`, `h, c: (batch, hidden)`.

use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamId, ParamStore};
use super::tensor::Tensor;
use super::NnError;
use crate::scalar::Scalar;

/// Gate order used for every `[_; 4]` below.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

/// Graph-side LSTM parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub input_weights: [ParamId; 4],
    pub recurrent_weights: [ParamId; 4],
    pub biases: [ParamId; 4],
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        let input_weights = GATES.map(|gate| store.uniform(&format!("{name}.W_{gate}"), &[input_dim, hidden_dim], scale, rng));
        let recurrent_weights = GATES.map(|gate| store.uniform(&format!("{name}.U_{gate}"), &[hidden_dim, hidden_dim], scale, rng));
        let biases = GATES.map(|gate| store.zeros(&format!("{name}.b_{gate}"), &[1, hidden_dim]));
        Self { input_weights, recurrent_weights, biases, input_dim, hidden_dim }
    }

    /// One time step on graph nodes; returns `(h_t, c_t)`.
    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var, h_prev: Var, c_prev: Var) -> (Var, Var) {
        let mut pre = [x; 4];
        for k in 0..4 {
            let a = g.matmul(x, p[self.input_weights[k]]);
            let b = g.matmul(h_prev, p[self.recurrent_weights[k]]);
            let s = g.add(a, b);
            pre[k] = g.add_row(s, p[self.biases[k]]);
        }
        let i = g.sigmoid(pre[0]);
        let f = g.sigmoid(pre[1]);
        let o = g.sigmoid(pre[2]);
        let cand = g.tanh(pre[3]);
        let keep = g.mul(f, c_prev);
        let write = g.mul(i, cand);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        (h, c)
    }
}

/// Plain-tensor LSTM weights for value-level evaluation.
#[derive(Clone, Debug)]
pub struct LstmWeights<T> {
    pub input_weights: [Tensor<T>; 4],
    pub recurrent_weights: [Tensor<T>; 4],
    pub biases: [Tensor<T>; 4],
}

impl<T: Scalar> LstmWeights<T> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_weights: std::array::from_fn(|_| Tensor::zeros(&[input_dim, hidden_dim])),
            recurrent_weights: std::array::from_fn(|_| Tensor::zeros(&[hidden_dim, hidden_dim])),
            biases: std::array::from_fn(|_| Tensor::zeros(&[1, hidden_dim])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_weights[0].rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.input_weights[0].cols()
    }

    /// Loads these weights into `store` and returns the graph-side handles.
    pub fn register(&self, store: &mut ParamStore<T>, name: &str) -> LstmParams {
        let mut reg = |kind: &str, ts: &[Tensor<T>; 4]| -> [ParamId; 4] {
            std::array::from_fn(|k| store.add(format!("{name}.{kind}_{}", GATES[k]), ts[k].clone()))
        };
        let input_weights = reg("W", &self.input_weights);
        let recurrent_weights = reg("U", &self.recurrent_weights);
        let biases = reg("b", &self.biases);
        LstmParams { input_weights, recurrent_weights, biases, input_dim: self.input_dim(), hidden_dim: self.hidden_dim() }
    }
}

/// Gate activations of one step, kept for inspection.
#[derive(Clone, Debug)]
pub struct LstmStep<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
    pub input_gate: Tensor<T>,
    pub forget_gate: Tensor<T>,
    pub output_gate: Tensor<T>,
    pub candidate: Tensor<T>,
}

/// Value-level LSTM step.
pub fn lstm_cell<T: Scalar>(x: &Tensor<T>, h_prev: &Tensor<T>, c_prev: &Tensor<T>, w: &LstmWeights<T>) -> Result<LstmStep<T>, NnError> {
    let (inp, hid) = (w.input_dim(), w.hidden_dim());
    let batch = x.rows();
    if x.cols() != inp || h_prev.cols() != hid || c_prev.cols() != hid || h_prev.rows() != batch || c_prev.rows() != batch {
        return Err(NnError::ShapeMismatch(format!(
            "lstm_cell x{:?} h{:?} c{:?} for input {inp}, hidden {hid}",
            x.shape(),
            h_prev.shape(),
            c_prev.shape()
        )));
    }
    let mut store = ParamStore::new();
    let params = w.register(&mut store, "cell");
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let hv = g.constant(h_prev.clone());
    let cv = g.constant(c_prev.clone());
    let (h, c) = params.step(&mut g, &p, xv, hv, cv);
    // Gate nodes sit at fixed offsets before `c`: i, f, o, g are the four
    // nonlinearity outputs created after the pre-activations.
    let base = c.0 - 6;
    let gate = |off: usize| g.value(Var(base + off)).clone();
    Ok(LstmStep {
        h: g.value(h).clone(),
        c: g.value(c).clone(),
        input_gate: gate(0),
        forget_gate: gate(1),
        output_gate: gate(2),
        candidate: gate(3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_half_gates() {
        let w = LstmWeights::<f64>::zeros(3, 2);
        let x = Tensor::from_rows(&[vec![0.4, -2.0, 9.0]]);
        let zero = Tensor::zeros(&[1, 2]);
        let step = lstm_cell(&x, &zero, &zero, &w).unwrap();
        assert_eq!(step.input_gate.data(), &[0.5, 0.5]);
        assert_eq!(step.forget_gate.data(), &[0.5, 0.5]);
        assert_eq!(step.output_gate.data(), &[0.5, 0.5]);
        assert_eq!(step.candidate.data(), &[0.0, 0.0]);
        assert_eq!(step.c.data(), &[0.0, 0.0]);
        assert_eq!(step.h.data(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_weights_halve_the_cell() {
        let w = LstmWeights::<f64>::zeros(1, 2);
        let x = Tensor::from_rows(&[vec![1.0]]);
        let h = Tensor::zeros(&[1, 2]);
        let c = Tensor::from_rows(&[vec![1.5, -4.0]]);
        let step = lstm_cell(&x, &h, &c, &w).unwrap();
        for k in 0..2 {
            let cv = c.data()[k];
            assert!((step.c.data()[k] - 0.5 * cv).abs() < 1e-15);
            assert!((step.h.data()[k] - 0.5 * (0.5 * cv).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch() {
        let w = LstmWeights::<f64>::zeros(3, 2);
        let bad = Tensor::zeros(&[1, 4]);
        let h = Tensor::zeros(&[1, 2]);
        assert!(lstm_cell(&bad, &h, &h, &w).is_err());
    }
}
