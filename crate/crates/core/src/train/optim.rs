//! Adam with bias correction and the exponential moving average of weights.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates, kept in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape("adam: parameter, gradient and state counts differ".into()));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.len() != m.len() {
            return Err(Error::Shape(format!("adam: shape mismatch {:?} vs {:?}", p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gi = gi as f64;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let update = cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
            *w = (*w as f64 - update) as f32;
        }
    }
    Ok(())
}

/// `ema ← decay·ema + (1 − decay)·w`.
pub fn ema_update(ema: &mut [Tensor], weights: &[Tensor], decay: f64) -> Result<()> {
    if ema.len() != weights.len() {
        return Err(Error::Shape("ema: tensor counts differ".into()));
    }
    for (e, w) in ema.iter_mut().zip(weights) {
        if e.shape() != w.shape() {
            return Err(Error::Shape(format!("ema: shape mismatch {:?} vs {:?}", e.shape(), w.shape())));
        }
        for (a, &b) in e.data_mut().iter_mut().zip(w.data()) {
            *a = (decay * *a as f64 + (1.0 - decay) * b as f64) as f32;
        }
    }
    Ok(())
}
