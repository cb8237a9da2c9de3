use serde::{Deserialize, Serialize};

use super::NetworkParams;
use crate::error::{ensure_finite, Error, Result};

/// Bias-corrected Adam moments for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
        }
    }

    /// Applies one update to parameters stored as consecutive chunks whose
    /// concatenation lines up with `grad`.
    pub fn step_chunks(&mut self, chunks: &mut [&mut [f64]], grad: &[f64]) -> Result<()> {
        let total: usize = chunks.iter().map(|c| c.len()).sum();
        if total != grad.len() || grad.len() != self.m.len() {
            return Err(Error::dim("adam_step", self.m.len(), grad.len()));
        }
        ensure_finite(grad, "adam_step gradient")?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut i = 0;
        for chunk in chunks.iter_mut() {
            for p in chunk.iter_mut() {
                let g = grad[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                i += 1;
            }
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut NetworkParams, state: &mut AdamState, grad: &[f64]) -> Result<()> {
    state.step_chunks(&mut [params.theta.as_mut_slice()], grad)
}
