//! Small differentiable networks with hand-written reverse-mode gradients.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod models;
pub mod network;
pub mod optim;

use crate::error::{Error, Result};

pub use checkpoint::{parse_checkpoint, Checkpoint, CheckpointManifest};
pub use layers::{Activation, LayerSpec, Shape};
pub use loss::{joint_ppg_loss, nll_loss, pulse_loss, HeteroscedasticOutput, LOG_VAR_CLAMP};
pub use network::{DropoutMode, NetOutput, Network, NetworkSpec, OutputGrad};
pub use optim::Adam;

/// A parameter array with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::config(format!(
                "parameter shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter value".into()));
        }
        Ok(Self {
            shape,
            grad: vec![0.0; n],
            values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}
