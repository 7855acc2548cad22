//! Bias-corrected Adam over flat parameter slices.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Optimizer state: one (first-moment, second-moment) pair per parameter
/// tensor, keyed by the order tensors are visited within a step.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    step: u64,
    cursor: usize,
    slots: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> AdamState {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Starts one optimizer step; tensors must then be visited via
    /// [`update`](Self::update) in the same order every step.
    pub fn begin_step(&mut self) {
        self.step += 1;
        self.cursor = 0;
    }

    /// Applies θ ← θ − lr·m̂/(√v̂ + ε) to one tensor.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::validation(format!(
                "adam: {} params vs {} grads",
                params.len(),
                grads.len()
            )));
        }
        if self.cursor == self.slots.len() {
            self.slots
                .push((vec![0.0; params.len()], vec![0.0; params.len()]));
        }
        let (m, v) = &mut self.slots[self.cursor];
        if m.len() != params.len() {
            return Err(Error::validation(format!(
                "adam: slot {} holds {} entries, tensor has {}",
                self.cursor,
                m.len(),
                params.len()
            )));
        }
        self.cursor += 1;

        let t = self.step.max(1) as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for ((theta, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
        Ok(())
    }
}

/// One-tensor convenience wrapper matching the optimizer's published contract.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    state.begin_step();
    state.update(params, grads, lr)
}
