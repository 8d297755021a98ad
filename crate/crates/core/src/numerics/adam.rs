use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub hyper: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], hyper: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { step: 0, m: zeros(), v: zeros(), hyper }
    }

    /// One bias-corrected Adam update using the configured learning rate.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        let lr = self.hyper.lr;
        self.step_with_lr(params, grads, lr)
    }

    /// Same as [`step`](Self::step) but with an explicit learning rate, for schedules.
    pub fn step_with_lr(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return dim_err(format!("adam tracks {} tensors, got {} params and {} grads", self.m.len(), params.len(), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return dim_err(format!("adam tensor {i}: param {:?}, grad {:?}", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.hyper;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2, eps, lr) = (T::of(beta1), T::of(beta2), T::of(eps), T::of(lr));
        let (c1, c2) = (T::of(c1), T::of(c2));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gr;
                *vi = b2 * *vi + (T::one() - b2) * gr * gr;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
