//! Adam with L2 weight decay folded into the gradient (`g ← g + wd·θ`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::{GradMap, ParamStore};
use crate::error::{Result, RoarError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.00015,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

/// One optimizer step over every parameter present in `grads`.
///
/// Parameters with no gradient entry are left untouched, weight decay
/// included. All shapes are validated before anything is modified.
pub fn adam_step(params: &mut ParamStore, grads: &GradMap, state: &mut AdamState) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| RoarError::invalid(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(RoarError::invalid(format!(
                "gradient shape {:?} for {name} of shape {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if let Some(m) = state.first.get(name) {
            if m.len() != p.len() {
                return Err(RoarError::invalid(format!("moment buffer size mismatch for {name}")));
            }
        }
    }

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("validated above");
        let n = p.len();
        let m = state.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        for (((theta, gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let gi = gi + c.weight_decay * *theta;
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *theta -= c.lr * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }
    Ok(())
}
