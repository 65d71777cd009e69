use serde::{Deserialize, Serialize};

use crate::autodiff::params::ParamStore;
use crate::autodiff::tape::Gradients;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.015,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam with moment buffers shaped like the parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.second
    }

    /// One update of every parameter in `params`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::Contract(format!(
                "adam: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (id, g) in grads.iter() {
            if g.shape() != params.get(id).shape() {
                return Err(Error::shape("adam_step", params.get(id).shape(), g.shape()));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads.iter() {
            let m = self.first[id.0].data_mut();
            let v = self.second[id.0].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
