use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient; only applied to tensors flagged as embedding tables.
    pub weight_decay: f64,
    #[serde(default)]
    pub decay_scope: DecayScope,
}

/// Which rows of an embedding table receive weight decay in a step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayScope {
    /// Every row, every step.
    #[default]
    All,
    /// Only rows with a nonzero gradient, i.e. rows seen in the batch.
    ActiveRows,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.0, decay_scope: DecayScope::default() }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, ..Default::default() }
    }
}

/// A trainable tensor with its gradient buffer and Adam moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub value: Matrix,
    #[serde(skip, default)]
    pub grad: Matrix,
    #[serde(skip, default)]
    pub adam_m: Matrix,
    #[serde(skip, default)]
    pub adam_v: Matrix,
    #[serde(skip, default)]
    pub step_count: u64,
    /// Embedding tables receive L2 weight decay; everything else does not.
    pub regularized: bool,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        ParamTensor {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
            regularized: false,
        }
    }

    pub fn embedding(name: impl Into<String>, value: Matrix) -> Self {
        ParamTensor { regularized: true, ..ParamTensor::new(name, value) }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    /// Re-creates the optimizer buffers after deserialization.
    pub fn ensure_buffers(&mut self) {
        let (r, c) = self.value.shape();
        if self.grad.shape() != (r, c) {
            self.grad = Matrix::zeros(r, c);
        }
        if self.adam_m.shape() != (r, c) {
            self.adam_m = Matrix::zeros(r, c);
            self.adam_v = Matrix::zeros(r, c);
            self.step_count = 0;
        }
    }

    /// Clears the gradient and the Adam moments, as for a fresh optimizer.
    pub fn reset_optimizer(&mut self) {
        let (r, c) = self.value.shape();
        self.grad = Matrix::zeros(r, c);
        self.adam_m = Matrix::zeros(r, c);
        self.adam_v = Matrix::zeros(r, c);
        self.step_count = 0;
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// One bias-corrected Adam update. Zeroes the gradient afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), TrainError> {
        self.ensure_buffers();
        if !self.grad.is_finite() {
            return Err(TrainError::NonFiniteGradient(self.name.clone()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let decay = if self.regularized { cfg.weight_decay } else { 0.0 };
        let cols = self.value.cols().max(1);
        let row_decay: Vec<f64> = self
            .grad
            .as_slice()
            .chunks(cols)
            .map(|g| match cfg.decay_scope {
                DecayScope::ActiveRows if g.iter().all(|&x| x == 0.0) => 0.0,
                _ => decay,
            })
            .collect();
        let value = self.value.as_mut_slice();
        let grad = self.grad.as_mut_slice();
        let m = self.adam_m.as_mut_slice();
        let v = self.adam_v.as_mut_slice();
        for k in 0..value.len() {
            let g = grad[k] + row_decay[k / cols] * value[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            value[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            grad[k] = 0.0;
        }
        Ok(())
    }
}

/// Anything that owns a fixed, ordered collection of trainable tensors.
///
/// The visiting order defines the coordinate layout used by gradient checking
/// and serialization, so implementations must keep it stable.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor));

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |p| {
            p.ensure_buffers();
            p.zero_grad()
        });
    }

    fn adam_step_all(&mut self, cfg: &AdamConfig) -> Result<(), TrainError> {
        let mut result = Ok(());
        self.visit_params_mut(&mut |p| {
            if result.is_ok() {
                result = p.adam_step(cfg);
            }
        });
        result
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |p| ok &= p.value.is_finite());
        ok
    }
}
