//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, hyper: AdamHyper) -> Self {
        let m = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape().to_vec())).collect();
        let v = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self { m, v, step: 0, hyper }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update from the accumulated gradients; gradients are zeroed
    /// afterwards. A non-finite gradient aborts and names the parameter.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        for (_, p) in params.iter() {
            if let Some(pos) = p.grad.first_non_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient of parameter {:?} at flat index {pos}", p.name),
                });
            }
        }
        self.step += 1;
        let b1 = T::from_f64(self.hyper.beta1);
        let b2 = T::from_f64(self.hyper.beta2);
        let one_m_b1 = T::ONE - b1;
        let one_m_b2 = T::ONE - b2;
        let eps = T::from_f64(self.hyper.eps);
        let bc1 = T::from_f64(1.0 - self.hyper.beta1.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - self.hyper.beta2.powi(self.step as i32));
        let lr = T::from_f64(self.hyper.lr);

        for i in 0..params.len() {
            let pid = super::params::ParamId(i);
            let (val, grad) = params.value_and_grad_mut(pid);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((mi, vi), xi), &gi) in
                m.iter_mut().zip(v.iter_mut()).zip(val.data_mut().iter_mut()).zip(grad.data().iter())
            {
                *mi = b1 * *mi + one_m_b1 * gi;
                *vi = b2 * *vi + one_m_b2 * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *xi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}
