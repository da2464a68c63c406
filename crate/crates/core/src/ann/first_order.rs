//! Gradient-only trainers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::Result;

/// `theta -= lr * grad`; returns the MSE before the step.
pub fn sd_step(net: &mut Mlp, x: &DMatrix<f64>, t: &DMatrix<f64>, lr: f64) -> Result<f64> {
    let (g, mse) = net.mse_gradient(x, t)?;
    net.add_params(&g, -lr);
    Ok(mse)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }
}

/// Bias-corrected adaptive-moment step; returns the MSE before the step.
pub fn adam_step(net: &mut Mlp, x: &DMatrix<f64>, t: &DMatrix<f64>, st: &mut AdamState) -> Result<f64> {
    let (g, mse) = net.mse_gradient(x, t)?;
    st.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = st.cfg;
    let c1 = 1.0 - beta1.powi(st.t as i32);
    let c2 = 1.0 - beta2.powi(st.t as i32);
    let mut step = vec![0.0; g.len()];
    for i in 0..g.len() {
        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
        let mh = st.m[i] / c1;
        let vh = st.v[i] / c2;
        step[i] = mh / (vh.sqrt() + eps);
    }
    net.add_params(&step, -lr);
    Ok(mse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::mlp::Activation;

    fn data() -> (DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(3, 15, |r, c| ((r * 5 + c * 7) % 13) as f64 / 13.0 - 0.5);
        let t = DMatrix::from_fn(2, 15, |r, c| (c as f64 * 0.3 + r as f64).sin());
        (x, t)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, t) = data();
        for seed in 0..20 {
            let out = [Activation::Identity, Activation::Sigmoid][seed as usize % 2];
            let net = Mlp::new(&[3, 4, 3, 2], Activation::Tanh, out, seed).unwrap();
            let (g, _) = net.mse_gradient(&x, &t).unwrap();
            let p = net.params();
            for i in 0..p.len() {
                let mut a = net.clone();
                let mut b = net.clone();
                let mut q = p.clone();
                q[i] += 1e-6;
                a.set_params(&q).unwrap();
                q[i] -= 2e-6;
                b.set_params(&q).unwrap();
                let num = (a.mse(&x, &t).unwrap() - b.mse(&x, &t).unwrap()) / 2e-6;
                assert!((num - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3), "seed {seed} p{i}: {num} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let (x, t) = data();
        let mut net = Mlp::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, 1).unwrap();
        let before = net.clone();
        sd_step(&mut net, &x, &t, 0.0).unwrap();
        assert_eq!(net, before);
        let mut st = AdamState::new(net.n_params(), AdamConfig { lr: 0.0, ..AdamConfig::default() });
        adam_step(&mut net, &x, &t, &mut st).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn sd_descends_on_linear_least_squares() {
        let (x, t) = data();
        let mut net = Mlp::zeros(&[3, 2], Activation::Tanh, Activation::Identity).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let mse = sd_step(&mut net, &x, &t, 0.05).unwrap();
            assert!(mse <= last);
            last = mse;
        }
    }

    #[test]
    fn adam_reduces_error() {
        let (x, t) = data();
        let mut net = Mlp::new(&[3, 6, 2], Activation::Tanh, Activation::Identity, 2).unwrap();
        let start = net.mse(&x, &t).unwrap();
        let mut st = AdamState::new(net.n_params(), AdamConfig { lr: 0.01, ..AdamConfig::default() });
        for _ in 0..300 {
            adam_step(&mut net, &x, &t, &mut st).unwrap();
        }
        assert!(net.mse(&x, &t).unwrap() < 0.5 * start);
    }
}
