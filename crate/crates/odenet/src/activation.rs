use ndarray::Array1;

use crate::error::{Error, Result};

/// Componentwise nonlinearity of the network dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn value(self, r: f64) -> f64 {
        match self {
            Activation::Tanh => r.tanh(),
            Activation::Relu => r.max(0.0),
        }
    }

    /// Derivative of the activation. For ReLU the derivative at exactly 0
    /// is defined as 0 (indicator of the open half-line).
    #[inline]
    pub fn derivative(self, r: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = r.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if r > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidConfig(format!("unknown activation {other:?}"))),
        }
    }
}

/// Evaluate `σ(z)` and `σ'(z)` componentwise.
///
/// Rejects non-finite inputs; the solvers use the unchecked scalar methods
/// internally after validating their own inputs.
pub fn activation_eval(act: Activation, z: &Array1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("activation input"));
    }
    let value = z.mapv(|r| act.value(r));
    let derivative = z.mapv(|r| act.derivative(r));
    Ok((value, derivative))
}
