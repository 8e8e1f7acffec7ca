use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ParameterStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates for every parameter, plus the step count.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, m: BTreeMap::new(), v: BTreeMap::new(), t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.v.get(name).map(Vec::as_slice)
    }

    /// One bias-corrected Adam update of every parameter named in `grads`.
    /// Parameters without an entry in `grads` are left untouched.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| Error::Invalid(format!("gradient for unknown parameter {name}")))?;
            if p.len() != g.len() {
                return Err(Error::shape("adam", format!("{name}: {} values vs {} gradients", p.len(), g.len())));
            }
            if let Some(m) = self.m.get(name) {
                if m.len() != p.len() {
                    return Err(Error::shape("adam", format!("{name}: state holds {} values", m.len())));
                }
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above").data_mut();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
