use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Parameter, Tensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Per-parameter moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize], cfg: AdamConfig) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }
}

/// One bias-corrected Adam update of `p` in place.
///
/// The gradient is left untouched; callers zero it before the next
/// accumulation pass.
pub fn adam_step<T: Scalar>(p: &mut Parameter<T>, s: &mut AdamState<T>) -> Result<()> {
    if !p.grad.all_finite() {
        return Err(Error::Training { what: p.name.clone(), detail: "non-finite gradient".into() });
    }
    p.value.same_shape(&s.m)?;
    s.step += 1;
    let t = s.step as f64;
    let (b1, b2) = (T::of(s.beta1), T::of(s.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - s.beta1), T::of(1.0 - s.beta2));
    let c1 = T::of(1.0 - s.beta1.powf(t));
    let c2 = T::of(1.0 - s.beta2.powf(t));
    let lr = T::of(s.lr);
    let eps = T::of(s.eps);
    let value = p.value.data_mut();
    let m = s.m.data_mut();
    let v = s.v.data_mut();
    for (((w, &g), m), v) in value.iter_mut().zip(p.grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over an ordered parameter list, one state per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub names: Vec<String>,
    pub states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[&Parameter<T>], cfg: AdamConfig) -> Self {
        Self {
            names: params.iter().map(|p| p.name.clone()).collect(),
            states: params.iter().map(|p| AdamState::new(p.value.shape(), cfg)).collect(),
        }
    }

    /// Updates every parameter and zeroes its gradient.
    pub fn step(&mut self, params: Vec<&mut Parameter<T>>) -> Result<()> {
        if params.len() != self.states.len() {
            return Err(Error::Training {
                what: "optimizer".into(),
                detail: format!("{} parameters for {} states", params.len(), self.states.len()),
            });
        }
        for ((p, s), name) in params.into_iter().zip(self.states.iter_mut()).zip(&self.names) {
            debug_assert_eq!(&p.name, name);
            adam_step(p, s)?;
            p.zero_grad();
        }
        Ok(())
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.states.iter_mut().for_each(|s| s.lr = lr);
    }

    pub fn lr(&self) -> f64 {
        self.states.first().map(|s| s.lr).unwrap_or(0.0)
    }
}
