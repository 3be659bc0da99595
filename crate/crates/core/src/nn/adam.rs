use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip applied before the update.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-7, clip_norm: None }
    }
}

/// First/second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn for_params<T: Scalar>(params: &[Tensor<T>]) -> Self {
        Self {
            step: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn matches<T: Scalar>(&self, params: &[Tensor<T>]) -> bool {
        self.first_moment.len() == params.len()
            && self.first_moment.iter().zip(params).all(|(m, p)| m.len() == p.numel())
            && self.second_moment.iter().zip(params).all(|(v, p)| v.len() == p.numel())
    }
}

/// Bias-corrected Adam update, in place. Moments are kept in `f64`
/// regardless of the parameter type.
pub fn adam_step<T: Scalar>(params: &mut [Tensor<T>], grads: &[Tensor<T>], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert!(state.matches(params), "optimizer state does not match parameters");
    let clip = match cfg.clip_norm {
        Some(max) => {
            let norm = grads.iter().flat_map(|g| g.data()).map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
            if norm > max { max / norm } else { 1.0 }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gj = gv.f64() * clip;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *pv = T::c(pv.f64() - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
        }
    }
}
