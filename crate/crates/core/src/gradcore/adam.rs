use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{GradError, ModelParams, Tensor};

/// Adam hyperparameters with an exponentially decaying learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub initial_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_rate: f64,
    /// Steps over which the rate shrinks by one factor of `decay_rate`.
    pub decay_interval: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_rate: 0.99,
            decay_interval: 1,
        }
    }
}

impl AdamConfig {
    /// `initial_lr * decay_rate^(step / decay_interval)`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let interval = self.decay_interval.max(1) as f64;
        self.initial_lr * self.decay_rate.powf(step as f64 / interval)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step_count: 0,
        }
    }

    /// Learning rate the next update will use.
    pub fn effective_lr(&self) -> f64 {
        self.config.lr_at(self.step_count)
    }

    /// Applies one bias-corrected Adam update to every parameter that has a gradient.
    ///
    /// Gradients are validated before anything is modified, so a failed step
    /// leaves both `params` and `self` untouched.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<(), GradError> {
        for (name, g) in grads {
            let Some(p) = params.tensors.get(name) else {
                return Err(GradError::InvalidArgument(format!(
                    "gradient for unknown parameter `{name}`"
                )));
            };
            if p.shape() != g.shape() {
                return Err(GradError::InvalidArgument(format!(
                    "gradient for `{name}` has shape {}, parameter has {}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(GradError::NonFiniteGradient(name.clone()));
            }
        }

        let cfg = &self.config;
        let lr = self.effective_lr();
        let t = (self.step_count + 1) as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, g) in grads {
            let p = params.tensors.get_mut(name).expect("validated above");
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pi, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                let gi = gi as f64;
                let m_new = cfg.beta1 * *mi as f64 + (1.0 - cfg.beta1) * gi;
                let v_new = cfg.beta2 * *vi as f64 + (1.0 - cfg.beta2) * gi * gi;
                *mi = m_new as f32;
                *vi = v_new as f32;
                let update = lr * (m_new / bc1) / ((v_new / bc2).sqrt() + cfg.eps);
                *pi = (*pi as f64 - update) as f32;
            }
        }
        self.step_count += 1;
        Ok(())
    }
}

/// Functional form of [`AdamState::step`]: returns the updated parameters and state.
pub fn adam_step(
    params: &ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &AdamState,
) -> Result<(ModelParams, AdamState), GradError> {
    let mut p = params.clone();
    let mut st = state.clone();
    st.step(&mut p, grads)?;
    Ok((p, st))
}
