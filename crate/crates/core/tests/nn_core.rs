use ipred::nn::{
    adam_step, attention, cross_entropy, embed, fit_with_early_stopping, grad_check, lstm_cell, softmax, AdamConfig,
    AdamState, Bound, EpochRunner, Graph, LstmWeights, ParamStore, Tensor, TransformerBlock, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor<f64> {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Scaled dot-product attention for one head, written out with scalar loops.
fn attention_oracle(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, causal: bool) -> Vec<f64> {
    let (n, d, m, dv) = (q.rows(), q.cols(), k.rows(), v.cols());
    let mut out = vec![0.0; n * dv];
    for i in 0..n {
        let visible = if causal { i + 1 } else { m };
        let mut s = vec![0.0; visible];
        for j in 0..visible {
            let mut dot = 0.0;
            for t in 0..d {
                dot += q.at(i, t) * k.at(j, t);
            }
            s[j] = dot / (d as f64).sqrt();
        }
        let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        for c in 0..dv {
            out[i * dv + c] = (0..visible).map(|j| e[j] / z * v.at(j, c)).sum();
        }
    }
    out
}

#[test]
fn attention_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let n = rng.gen_range(1..7);
        let d = rng.gen_range(1..6);
        let dv = rng.gen_range(1..5);
        let causal = case % 2 == 0;
        let q = rand_tensor(&mut rng, n, d, 2.0);
        let k = rand_tensor(&mut rng, n, d, 2.0);
        let v = rand_tensor(&mut rng, n, dv, 3.0);
        let got = attention(&q, &k, &v, causal).unwrap();
        for (a, b) in got.data().iter().zip(attention_oracle(&q, &k, &v, causal)) {
            assert!((a - b).abs() <= 1e-12, "case {case}: {a} vs {b}");
        }
    }
}

#[test]
fn hand_set_three_position_attention() {
    let q = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
    let k = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0]]);
    let v = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
    let got = attention(&q, &k, &v, false).unwrap();
    // row 0 logits: (1, 0, -1)/sqrt 2
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (a, b, c) = (s.exp(), 1.0, (-s).exp());
    let z = a + b + c;
    assert!((got.at(0, 0) - (a * 1.0 + b * 3.0 + c * 5.0) / z).abs() < 1e-14);
    assert!((got.at(0, 1) - (a * 2.0 + b * 4.0 + c * 6.0) / z).abs() < 1e-14);
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn lstm_cell_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..150 {
        let (batch, inp, hid) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..5));
        let mut w = LstmWeights::<f64>::zeros(inp, hid);
        for g in 0..4 {
            w.input_weights[g] = rand_tensor(&mut rng, inp, hid, 1.0);
            w.recurrent_weights[g] = rand_tensor(&mut rng, hid, hid, 1.0);
            w.biases[g] = rand_tensor(&mut rng, 1, hid, 0.5);
        }
        let x = rand_tensor(&mut rng, batch, inp, 2.0);
        let h = rand_tensor(&mut rng, batch, hid, 1.0);
        let c = rand_tensor(&mut rng, batch, hid, 2.0);
        let step = lstm_cell(&x, &h, &c, &w).unwrap();
        for b in 0..batch {
            for u in 0..hid {
                let pre = |g: usize| {
                    let mut s = w.biases[g].at(0, u);
                    for t in 0..inp {
                        s += x.at(b, t) * w.input_weights[g].at(t, u);
                    }
                    for t in 0..hid {
                        s += h.at(b, t) * w.recurrent_weights[g].at(t, u);
                    }
                    s
                };
                let (i, f, o, g) = (sigmoid(pre(0)), sigmoid(pre(1)), sigmoid(pre(2)), pre(3).tanh());
                let c_t = f * c.at(b, u) + i * g;
                let h_t = o * c_t.tanh();
                assert!((step.c.at(b, u) - c_t).abs() <= 1e-12, "case {case}");
                assert!((step.h.at(b, u) - h_t).abs() <= 1e-12, "case {case}");
            }
        }
    }
}

#[test]
fn grad_check_attention_softmax_ce() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params: Vec<Tensor<f64>> = (0..3).map(|_| rand_tensor(&mut rng, 2, 4, 1.0)).collect();
    let f = |g: &mut Graph<f64>, v: &[Var]| {
        let a = ipred::nn::attention_node(g, v[0], v[1], v[2], true).unwrap();
        g.cross_entropy(a, &[1, 3], &[true, true]).unwrap()
    };
    let err = grad_check(f, &params, 1e-5);
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn grad_check_unrolled_lstm_ce() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (inp, hid) = (3, 4);
    let mut params = Vec::new();
    for _ in 0..4 {
        params.push(rand_tensor(&mut rng, inp, hid, 0.7));
        params.push(rand_tensor(&mut rng, hid, hid, 0.7));
        params.push(rand_tensor(&mut rng, 1, hid, 0.3));
    }
    params.push(rand_tensor(&mut rng, hid, 3, 0.7));
    let xs: Vec<Tensor<f64>> = (0..3).map(|_| rand_tensor(&mut rng, 2, inp, 1.0)).collect();
    let f = |g: &mut Graph<f64>, v: &[Var]| {
        let mut h = g.constant(Tensor::zeros(&[2, hid]));
        let mut c = g.constant(Tensor::zeros(&[2, hid]));
        for x in &xs {
            let x = g.constant(x.clone());
            let mut pre = Vec::new();
            for k in 0..4 {
                let a = g.matmul(x, v[3 * k]);
                let b = g.matmul(h, v[3 * k + 1]);
                let s = g.add(a, b);
                pre.push(g.add_row(s, v[3 * k + 2]));
            }
            let (i, fg, o, cand) = (g.sigmoid(pre[0]), g.sigmoid(pre[1]), g.sigmoid(pre[2]), g.tanh(pre[3]));
            let keep = g.mul(fg, c);
            let write = g.mul(i, cand);
            c = g.add(keep, write);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
        }
        let logits = g.matmul(h, v[12]);
        g.cross_entropy(logits, &[0, 2], &[true, true]).unwrap()
    };
    let err = grad_check(f, &params, 1e-5);
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn grad_check_two_block_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let blocks: Vec<TransformerBlock> =
        (0..2).map(|l| TransformerBlock::new(&mut store, &format!("b{l}"), 8, 2, 0.3, &mut rng).unwrap()).collect();
    let head = store.uniform("head", &[8, 5], 0.5, &mut rng);
    let input = rand_tensor(&mut rng, 4, 8, 1.0);
    // jitter layer-norm gains and biases away from 1 / 0
    let mut params = store.tensors().to_vec();
    for t in params.iter_mut() {
        for x in t.data_mut() {
            *x += rng.gen_range(-0.1..0.1);
        }
    }
    params.push(input);
    let n = store.len();
    let f = |g: &mut Graph<f64>, v: &[Var]| {
        let p = Bound::from_vars(v[..n].to_vec());
        let mut x = v[n];
        for b in &blocks {
            x = b.forward(g, &p, x, &[(0, 4)], true, 0.0);
        }
        let logits = g.matmul(x, p[head]);
        g.cross_entropy(logits, &[0, 4, 2, 1], &[true; 4]).unwrap()
    };
    let err = grad_check(f, &params, 1e-5);
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn block_shapes_identity_and_causality() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::<f64>::new();
    let zero = TransformerBlock::new(&mut store, "z", 8, 2, 0.0, &mut rng).unwrap();
    for seq in [1, 4, 16] {
        let h = rand_tensor(&mut rng, seq, 8, 1.0);
        let out = ipred::nn::transformer_block(&h, &zero, &store, true).unwrap();
        assert_eq!(out.shape(), h.shape());
        assert_eq!(out.data(), h.data());
    }

    let mut store = ParamStore::<f64>::new();
    let block = TransformerBlock::new(&mut store, "c", 8, 4, 0.5, &mut rng).unwrap();
    let h = rand_tensor(&mut rng, 6, 8, 1.0);
    let base = ipred::nn::transformer_block(&h, &block, &store, true).unwrap();
    for j in 1..6 {
        let mut bumped = h.clone();
        for c in 0..8 {
            bumped.data_mut()[j * 8 + c] += 3.0;
        }
        let out = ipred::nn::transformer_block(&bumped, &block, &store, true).unwrap();
        for i in 0..j {
            assert_eq!(out.row(i), base.row(i), "row {i} saw position {j}");
        }
        assert_ne!(out.row(j), base.row(j));
    }
}

#[test]
fn embedding_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let we = rand_tensor(&mut rng, 10, 4, 1.0);
    let wp = rand_tensor(&mut rng, 6, 4, 1.0);
    let tokens = [3usize, 7, 3, 0];
    let h = embed(&tokens, &we, &Tensor::zeros(&[6, 4])).unwrap();
    for (i, &t) in tokens.iter().enumerate() {
        assert_eq!(h.row(i), we.row(t));
    }
    let h = embed(&tokens, &we, &wp).unwrap();
    for c in 0..4 {
        assert!((h.at(2, c) - h.at(0, c) - (wp.at(2, c) - wp.at(0, c))).abs() < 1e-15);
    }
    // one-hot T · W_e + W_p[..n]
    let mut g = Graph::<f64>::new();
    let mut onehot = Tensor::zeros(&[4, 10]);
    for (i, &t) in tokens.iter().enumerate() {
        onehot.data_mut()[i * 10 + t] = 1.0;
    }
    let t = g.constant(onehot);
    let w = g.constant(we.clone());
    let prod = g.matmul(t, w);
    let pos = g.constant(Tensor::new(vec![4, 4], wp.data()[..16].to_vec()).unwrap());
    let sum = g.add(prod, pos);
    assert_eq!(g.value(sum).data(), h.data());
    assert!(embed(&[10], &we, &wp).is_err());
    assert!(embed(&[0; 7], &we, &wp).is_err());
}

#[test]
fn adam_examples() {
    let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None };
    let mut p = vec![Tensor::from_rows(&[vec![1.0, -2.0, 0.5]])];
    let mut st = AdamState::for_params(&p);
    adam_step(&mut p, &[Tensor::zeros(&[1, 3])], &mut st, &cfg);
    assert_eq!(p[0].data(), &[1.0, -2.0, 0.5]);

    let mut p = vec![Tensor::from_rows(&[vec![1.0, 1.0, 0.0]])];
    let mut st = AdamState::for_params(&p);
    let g = Tensor::from_rows(&[vec![0.3, 0.3, -2.0]]);
    adam_step(&mut p, std::slice::from_ref(&g), &mut st, &cfg);
    for (j, &x0) in [1.0f64, 1.0, 0.0].iter().enumerate() {
        let gj = g.data()[j];
        let m_hat = (0.1 * gj) / (1.0 - 0.9);
        let v_hat: f64 = (0.001 * gj * gj) / (1.0 - 0.999);
        let want = x0 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0].data()[j] - want).abs() < 1e-15);
    }
    assert_eq!(p[0].data()[0], p[0].data()[1]);
}

#[test]
fn dropout_is_identity_when_off() {
    let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]);
    let mut g = Graph::<f64>::new();
    let v = g.constant(x.clone());
    let d = g.dropout(v, 0.2);
    assert_eq!(g.value(d).data(), x.data());
    let mut g = Graph::<f64>::training(ChaCha8Rng::seed_from_u64(0));
    let v = g.constant(x.clone());
    let d = g.dropout(v, 0.0);
    assert_eq!(g.value(d).data(), x.data());
}

#[test]
fn cross_entropy_examples() {
    let l = cross_entropy(&Tensor::<f64>::zeros(&[1, 7]), &[4], &[false]).unwrap();
    assert!((l - 7f64.ln()).abs() < 1e-15);
    let l = cross_entropy(&Tensor::from_rows(&[vec![0.0, 3f64.ln()]]), &[1], &[false]).unwrap();
    assert!((l + 0.75f64.ln()).abs() < 1e-15);
}

/// A real parameter vector trained by plain gradient steps, judged by a
/// validation loss that only gets worse.
struct Worsening {
    params: Vec<f64>,
    epoch: usize,
}

impl EpochRunner for Worsening {
    type Snapshot = Vec<f64>;
    fn train_epoch(&mut self, epoch: usize) -> f64 {
        self.epoch = epoch;
        for p in &mut self.params {
            *p -= 0.1 * 2.0 * *p;
        }
        self.params.iter().map(|p| p * p).sum()
    }
    fn validation_loss(&mut self) -> f64 {
        1.0 + self.epoch as f64 * 0.5
    }
    fn snapshot(&self) -> Vec<f64> {
        self.params.clone()
    }
    fn restore(&mut self, s: Vec<f64>) {
        self.params = s;
    }
}

#[test]
fn worsening_validation_stops_at_patience_plus_one_and_restores() {
    for patience in [1, 3, 5] {
        let mut r = Worsening { params: vec![1.0, -2.0], epoch: 0 };
        let h = fit_with_early_stopping(&mut r, 80, patience);
        assert_eq!(h.epochs_run(), patience + 1);
        assert_eq!(h.best_epoch, 1);
        assert!(h.stopped_early);
        assert_eq!(r.params, vec![0.8, -1.6]);
    }
    // patience 0 stops at the first epoch that fails to improve
    let mut r = Worsening { params: vec![1.0, -2.0], epoch: 0 };
    assert_eq!(fit_with_early_stopping(&mut r, 80, 0).epochs_run(), 2);
    assert_eq!(r.params, vec![0.8, -1.6]);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in proptest::collection::vec(proptest::collection::vec(-50f64..50.0, 4), 1..6), c in -1e3f64..1e3) {
        let x = Tensor::from_rows(&rows);
        let s = softmax(&x, 1).unwrap();
        let shifted = softmax(&x.map(|v| v + c), 1).unwrap();
        for r in 0..s.rows() {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(s.row(r).iter().all(|&p| p >= 0.0));
            for (a, b) in s.row(r).iter().zip(shifted.row(r)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn lstm_gates_stay_in_range(seed in 0u64..10_000, scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = LstmWeights::<f64>::zeros(3, 4);
        for g in 0..4 {
            w.input_weights[g] = rand_tensor(&mut rng, 3, 4, scale);
            w.recurrent_weights[g] = rand_tensor(&mut rng, 4, 4, scale);
        }
        let x = rand_tensor(&mut rng, 2, 3, scale);
        let h = rand_tensor(&mut rng, 2, 4, 1.0);
        let step = lstm_cell(&x, &h, &h, &w).unwrap();
        for t in [&step.input_gate, &step.forget_gate, &step.output_gate] {
            prop_assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        prop_assert!(step.candidate.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn zero_query_averages_visible_rows(n in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rand_tensor(&mut rng, n, 3, 2.0);
        let v = rand_tensor(&mut rng, n, 2, 2.0);
        let out = attention(&Tensor::zeros(&[n, 3]), &k, &v, true).unwrap();
        for i in 0..n {
            for c in 0..2 {
                let mean = (0..=i).map(|j| v.at(j, c)).sum::<f64>() / (i + 1) as f64;
                prop_assert!((out.at(i, c) - mean).abs() < 1e-12);
            }
        }
    }
}
