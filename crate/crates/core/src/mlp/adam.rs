use serde::{Deserialize, Serialize};

use super::network::{Gradients, MlpParams};
use crate::error::{Error, Result};

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
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators shaped like the parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub(crate) first: Vec<Vec<f64>>,
    pub(crate) second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensor_lengths().into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn from_parts(config: AdamConfig, step: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Self {
        Self {
            config,
            step,
            first,
            second,
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    fn check_shapes(&self, params: &MlpParams, grads: &Gradients) -> Result<()> {
        let expected = params.tensor_lengths();
        let lens = |t: &[Vec<f64>]| t.iter().map(Vec::len).collect::<Vec<_>>();
        for (name, got) in [
            ("gradient", lens(&grads.tensors)),
            ("first moment", lens(&self.first)),
            ("second moment", lens(&self.second)),
        ] {
            if got != expected {
                return Err(Error::Shape(format!("{name} tensors {got:?} do not match parameters {expected:?}")));
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut MlpParams, grads: &Gradients) -> Result<()> {
        self.check_shapes(params, grads)?;
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (first, second) = (&mut self.first, &mut self.second);
        params.update_tensors(|i, p| {
            let (m, v, g) = (&mut first[i], &mut second[i], &grads.tensors[i]);
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        });
        Ok(())
    }
}
