use serde::{Deserialize, Serialize};

use super::spec::ParamBlock;
use super::{Network, NeuralError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn from_state(
        config: AdamConfig,
        step: u64,
        m: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self, NeuralError> {
        if m.len() != v.len() {
            return Err(NeuralError::Shape(format!(
                "Adam moments differ in length: {} vs {}",
                m.len(),
                v.len()
            )));
        }
        Ok(Self { config, step, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one update. Nothing changes if any gradient is non-finite.
    pub fn update(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        blocks: &[ParamBlock],
    ) -> Result<(), NeuralError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(NeuralError::Shape(format!(
                "Adam state covers {} parameters; got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            let block = blocks
                .iter()
                .find(|b| i >= b.offset && i < b.offset + b.len)
                .map_or_else(|| "<unnamed>".to_string(), |b| b.name.clone());
            return Err(NeuralError::NonFiniteGradient { block, index: i });
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }

    pub fn step(&mut self, net: &mut Network, grads: &[f64]) -> Result<(), NeuralError> {
        let (params, blocks) = net.params_and_blocks_mut();
        self.update(params, grads, blocks)
    }
}
