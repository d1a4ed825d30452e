use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Param;
use crate::error::{Error, Result};

/// Hyperparameters shared by every [`AdamState`] of one optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// One state per parameter, moments zeroed.
    pub fn init(&self, params: &[&Param]) -> Vec<AdamState> {
        params.iter().map(|p| AdamState::new(p.value.numel(), *self)).collect()
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    fn update(&mut self, value: &mut [f64], grad: &[f64]) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (((w, &g), m), v) in
            value.iter_mut().zip(grad).zip(self.first_moment.iter_mut()).zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= self.lr * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
    }
}

/// Applies one Adam update to every parameter and clears its gradient.
///
/// Validates all parameters before touching any of them, so a failure leaves
/// parameters and states unchanged.
pub fn adam_step(params: &mut [&mut Param], states: &mut [AdamState]) -> Result<()> {
    if params.len() != states.len() {
        return Err(Error::StateMismatch(format!("{} parameters but {} states", params.len(), states.len())));
    }
    for (i, (p, s)) in params.iter().zip(states.iter()).enumerate() {
        let Some(g) = &p.grad else {
            return Err(Error::MissingGradient(i));
        };
        let n = p.value.numel();
        if g.len() != n || s.first_moment.len() != n || s.second_moment.len() != n {
            return Err(Error::StateMismatch(format!("parameter {i} has {n} elements")));
        }
    }
    for (p, s) in params.iter_mut().zip(states.iter_mut()) {
        let g = p.grad.take().expect("validated above");
        s.update(p.value.data_mut(), &g);
    }
    Ok(())
}
