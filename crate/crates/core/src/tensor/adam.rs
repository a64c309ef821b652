use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{shape_err, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
    params: AdamParams,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Self { m: vec![T::zero(); len], v: vec![T::zero(); len], t: 0, params }
    }
    pub fn first_moment(&self) -> &[T] {
        &self.m
    }
    pub fn second_moment(&self) -> &[T] {
        &self.v
    }
    pub fn step_count(&self) -> u64 {
        self.t
    }
    pub fn params(&self) -> AdamParams {
        self.params
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Real>(param: &mut [T], grad: &[T], state: &mut AdamState<T>) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.m.len() {
        return Err(shape_err!("adam: param {}, grad {}, state {}", param.len(), grad.len(), state.m.len()));
    }
    state.t += 1;
    let p = state.params;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let b1 = T::from_f64(p.beta1);
    let b2 = T::from_f64(p.beta2);
    let one_b1 = T::from_f64(1.0 - p.beta1);
    let one_b2 = T::from_f64(1.0 - p.beta2);
    let bc1 = T::from_f64(1.0 - p.beta1.powi(t));
    let bc2 = T::from_f64(1.0 - p.beta2.powi(t));
    let lr = T::from_f64(p.lr);
    let eps = T::from_f64(p.eps);
    for ((w, &g), (m, v)) in param.iter_mut().zip(grad).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
