//! Adam with an optional cosine learning-rate schedule. Moments are kept in
//! f64 regardless of the parameter precision so that long runs in f32 do not
//! lose the small-update tail.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use alloc::vec::Vec;

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

pub struct Adam<T: Scalar> {
    params: Vec<Tensor<T>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    horizon: Option<u64>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: Vec<Tensor<T>>, lr: f64) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            params,
            m,
            v,
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            step: 0,
            horizon: None,
        }
    }

    /// Decay the learning rate along a half cosine reaching zero after
    /// `total_steps` calls to [`step`](Self::step).
    pub fn with_cosine_decay(mut self, total_steps: u64) -> Self {
        self.horizon = Some(total_steps.max(1));
        self
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    /// Learning rate the next [`step`](Self::step) call will use.
    pub fn current_lr(&self) -> f64 {
        match self.horizon {
            None => self.lr,
            Some(total) => {
                let t = (self.step.min(total)) as f64 / total as f64;
                self.lr * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * t))
            }
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one Adam update from the accumulated gradients, then clear
    /// them. Fails if any parameter is missing its gradient.
    pub fn step(&mut self) -> Result<()> {
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (p, (m, v)) in self.params.iter().zip(self.m.iter_mut().zip(&mut self.v)) {
            let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
            p.apply_step(|data, grad| {
                for i in 0..data.len() {
                    let g = grad[i].to_f64();
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    let upd = lr * mhat / (libm::sqrt(vhat) + eps);
                    data[i] = T::from_f64(data[i].to_f64() - upd);
                }
            })?;
        }
        for p in &self.params {
            p.zero_grad();
        }
        Ok(())
    }

    /// Clear gradients without updating, e.g. before the first backward.
    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
