use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.97,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One contiguous block of parameters with its gradient. Blocks with
/// `decay == false` are exempt from weight decay.
pub struct ParamGroup<'a> {
    pub params: &'a mut [f64],
    pub grads: &'a [f64],
    pub decay: bool,
}

/// Adam with bias correction and decoupled weight decay
/// (`p ← p − lr·wd·p`, then the Adam step).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            config,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Single block, weight decay applied to all of it.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_groups(&mut [ParamGroup {
            params,
            grads,
            decay: true,
        }])
    }

    /// Blocks are laid end to end against the moment buffers.
    pub fn step_groups(&mut self, groups: &mut [ParamGroup<'_>]) -> Result<()> {
        let total: usize = groups.iter().map(|g| g.params.len()).sum();
        check_len("adam parameters", self.first_moment.len(), total)?;
        for g in groups.iter() {
            check_len("adam gradient", g.params.len(), g.grads.len())?;
        }
        let c = self.config;
        if !(c.learning_rate >= 0.0) {
            return Err(Error::invalid("learning rate must be non-negative"));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        let mut k = 0;
        for g in groups.iter_mut() {
            let shrink = if g.decay {
                1.0 - c.learning_rate * c.weight_decay
            } else {
                1.0
            };
            for (p, &grad) in g.params.iter_mut().zip(g.grads.iter()) {
                let m = &mut self.first_moment[k];
                let v = &mut self.second_moment[k];
                *m = c.beta1 * *m + (1.0 - c.beta1) * grad;
                *v = c.beta2 * *v + (1.0 - c.beta2) * grad * grad;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p *= shrink;
                *p -= c.learning_rate * m_hat / (libm::sqrt(v_hat) + c.epsilon);
                k += 1;
            }
        }
        Ok(())
    }

    /// Clears moments and the step counter; the configuration is kept.
    pub fn reset(&mut self) {
        self.first_moment.iter_mut().for_each(|m| *m = 0.0);
        self.second_moment.iter_mut().for_each(|v| *v = 0.0);
        self.step_count = 0;
    }
}
