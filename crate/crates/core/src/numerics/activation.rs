use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at `x`. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    pub fn forward(self, x: &Matrix) -> Matrix {
        let data = x.as_slice().iter().map(|&v| self.apply(v)).collect();
        Matrix::from_vec(x.rows(), x.cols(), data).expect("shape preserved")
    }

    /// Jacobian-vector product: `upstream ⊙ f'(x)`.
    pub fn backward(self, x: &Matrix, upstream: &Matrix) -> Matrix {
        assert_eq!(x.shape(), upstream.shape(), "activation backward shape");
        let data = x
            .as_slice()
            .iter()
            .zip(upstream.as_slice())
            .map(|(&v, &g)| g * self.derivative(v))
            .collect();
        Matrix::from_vec(x.rows(), x.cols(), data).expect("shape preserved")
    }
}

impl FromStr for Activation {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(ConfigError::UnknownActivation(other.to_string())),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
    }

    #[test]
    fn tanh_backward_at_zero() {
        let x = Matrix::column(&[0.0]);
        let g = Activation::Tanh.backward(&x, &Matrix::column(&[1.0]));
        assert_eq!(g.as_slice(), &[1.0]);
    }

    #[test]
    fn relu_backward_masks_negatives() {
        let x = Matrix::column(&[-2.0, 3.0]);
        let g = Activation::Relu.backward(&x, &Matrix::column(&[5.0, 5.0]));
        assert_eq!(g.as_slice(), &[0.0, 5.0]);
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert_eq!("gelu".parse::<Activation>(), Err(ConfigError::UnknownActivation("gelu".into())));
        assert_eq!("relu".parse::<Activation>(), Ok(Activation::Relu));
    }

    #[test]
    fn derivatives_match_central_differences() {
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::Relu] {
            for &x in &[-1.3, -0.2, 0.4, 2.1] {
                let h = 1e-6;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act} at {x}");
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
