use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{axpy, Activation, Matrix, ParamTensor, Parameterized};

/// Affine layer `y = W x + b` with `W: out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn xavier<R: Rng>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        Dense {
            weight: ParamTensor::new(format!("{name}.weight"), Matrix::from_vec(fan_out, fan_in, data).expect("shape")),
            bias: ParamTensor::new(format!("{name}.bias"), Matrix::zeros(fan_out, 1)),
        }
    }

    pub fn zeros(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: ParamTensor::new(format!("{name}.weight"), Matrix::zeros(fan_out, fan_in)),
            bias: ParamTensor::new(format!("{name}.bias"), Matrix::zeros(fan_out, 1)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        self.weight.value.mul_vec_into(x, y);
        axpy(1.0, self.bias.value.as_slice(), y);
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.fan_out()];
        self.forward_into(x, &mut y);
        y
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        self.weight.grad.add_outer(1.0, dy, x);
        axpy(1.0, dy, self.bias.grad.as_mut_slice());
        self.weight.value.tr_mul_vec(dy)
    }

    /// `∂L/∂x` only; parameters untouched.
    pub fn input_grad(&self, dy: &[f64]) -> Vec<f64> {
        self.weight.value.tr_mul_vec(dy)
    }
}

impl Parameterized for Dense {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Feed-forward network with a hidden activation after every layer but the
/// last, and a single linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// `sizes` lists every width including input and the final `1`.
    pub fn new<R: Rng>(name: &str, sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        let layers = sizes.windows(2).enumerate().map(|(k, w)| Dense::xavier(&format!("{name}.{k}"), w[0], w[1], rng)).collect();
        Mlp { layers, activation }
    }

    pub fn zeros(name: &str, sizes: &[usize], activation: Activation) -> Self {
        let layers = sizes.windows(2).enumerate().map(|(k, w)| Dense::zeros(&format!("{name}.{k}"), w[0], w[1])).collect();
        Mlp { layers, activation }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn forward(&self, x: &[f64], cache: &mut MlpCache) -> f64 {
        let n = self.layers.len();
        cache.inputs.resize(n, Vec::new());
        cache.pre.resize(n, Vec::new());
        cache.inputs[0].clear();
        cache.inputs[0].extend_from_slice(x);
        for k in 0..n {
            let layer = &self.layers[k];
            let mut z = vec![0.0; layer.fan_out()];
            layer.forward_into(&cache.inputs[k], &mut z);
            if k + 1 < n {
                let a: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
                cache.pre[k] = z;
                cache.inputs[k + 1] = a;
            } else {
                cache.pre[k] = z;
            }
        }
        cache.pre[n - 1][0]
    }

    /// Backpropagates `∂L/∂output`; accumulates parameter gradients when
    /// `accumulate` is set and returns `∂L/∂x`.
    pub fn backward(&mut self, cache: &MlpCache, dout: f64, accumulate: bool) -> Vec<f64> {
        let n = self.layers.len();
        let mut dy = vec![dout];
        for k in (0..n).rev() {
            let dx = if accumulate {
                self.layers[k].backward(&cache.inputs[k], &dy)
            } else {
                self.layers[k].input_grad(&dy)
            };
            if k == 0 {
                return dx;
            }
            dy = dx.iter().zip(&cache.pre[k - 1]).map(|(g, &z)| g * self.activation.derivative(z)).collect();
        }
        unreachable!("mlp has at least one layer")
    }
}

impl Parameterized for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&ParamTensor)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}
