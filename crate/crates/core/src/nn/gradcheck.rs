//! Central finite differences against reverse-mode gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Max over all parameter coordinates of
/// `max(0, |g_ad − g_fd| − ε·|f|/h) / max(1e-8, |g_ad| + |g_fd|)`.
///
/// The subtracted term is the rounding error of the difference quotient
/// itself, so a coordinate whose true gradient is exactly zero does not
/// report ulp noise as a mismatch.
///
/// `f` builds a scalar loss from tracked parameter nodes. It is called once
/// for the analytic gradient and twice per coordinate for the numeric one.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], h: f64) -> f64
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars);
    g.backward(loss);
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| g.grad_tensor(v)).collect();

    let eval = |ps: &[Tensor<T>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = f(&mut g, &vars);
        g.scalar(out).f64()
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<T>> = params.to_vec();
    for k in 0..params.len() {
        for j in 0..params[k].numel() {
            let orig = params[k].data()[j];
            work[k].data_mut()[j] = T::c(orig.f64() + h);
            let up = eval(&work);
            work[k].data_mut()[j] = T::c(orig.f64() - h);
            let down = eval(&work);
            work[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let ad = analytic[k].data()[j].f64();
            // rounding in up/down alone can move the difference quotient by this much
            let noise = T::epsilon().f64() * up.abs().max(down.abs()) / h;
            let miss = ((ad - numeric).abs() - noise).max(0.0);
            let rel = miss / (ad.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::<f64>::from_rows(&[vec![3.0]]);
        let f = |g: &mut Graph<f64>, v: &[Var]| g.mul(v[0], v[0]);
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let y = f(&mut g, &[xv]);
        g.backward(y);
        assert_eq!(g.grad(xv).unwrap(), &[6.0]);
        assert!(grad_check(f, &[x], 1e-5) < 1e-9);
    }

    #[test]
    fn kink_is_still_flagged() {
        // relu at 0: one-sided analytic slope vs a symmetric quotient of 0.5
        let x = Tensor::<f64>::from_rows(&[vec![0.0]]);
        let f = |g: &mut Graph<f64>, v: &[Var]| {
            let r = g.relu(v[0]);
            g.sum(r)
        };
        assert!(grad_check(f, &[x], 1e-5) > 0.3);
    }
}
