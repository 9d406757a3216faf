use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParamSet, Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState::default(),
        }
    }

    /// One bias-corrected update of every parameter, then clears gradients.
    /// Fails without touching anything if any parameter lacks a gradient.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad.is_none()) {
            return Err(TensorError::MissingGrad(name.to_string()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let grad = p.grad.take().expect("checked above");
            let n = grad.len();
            let m = self
                .state
                .first
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; n]);
            let v = self
                .state
                .second
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; n]);
            for (((w, &g), m), v) in p.values_mut().iter_mut().zip(&grad).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        params.quantize();
        Ok(())
    }
}
