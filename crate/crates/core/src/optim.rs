//! Adaptive-moment (Adam) updates of the phase parameters.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grad::GradientSet;
use crate::model::DonnModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimState {
    pub config: AdamConfig,
    step: u64,
    first: GradientSet,
    second: GradientSet,
}

impl OptimState {
    pub fn new(model: &DonnModel, config: AdamConfig) -> Self {
        OptimState {
            config,
            step: 0,
            first: GradientSet::zeros_like(model),
            second: GradientSet::zeros_like(model),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam step, in place.
pub fn optim_step(
    model: &mut DonnModel,
    grads: &GradientSet,
    state: &mut OptimState,
) -> Result<()> {
    grads.ensure_matches(model)?;
    state.first.ensure_congruent(grads)?;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - beta1.powf(t);
    let c2 = 1.0 - beta2.powf(t);
    let params = model.thetas_mut();
    let moments = state.first.iter_mut().zip(state.second.iter_mut());
    for ((theta, g), (m, v)) in params.zip(grads.iter()).zip(moments) {
        Zip::from(theta)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|theta, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            });
    }
    Ok(())
}
