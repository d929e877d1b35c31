//! First-order optimizers over the flat parameter vector.

use serde::{Deserialize, Serialize};

use super::GradientTape;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr, momentum: 0.0 }
    }

    pub fn state(self, num_params: usize) -> OptimizerState {
        OptimizerState {
            opt: self,
            first: vec![0.0; num_params],
            second: match self {
                Optimizer::Adam { .. } => vec![0.0; num_params],
                Optimizer::Sgd { .. } => Vec::new(),
            },
            steps: 0,
        }
    }
}

/// Moment buffers carried across steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    opt: Optimizer,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of `params` against `tape`.
    pub fn step(&mut self, params: &mut [f64], tape: &GradientTape) -> Result<()> {
        if tape.grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::Shape("gradient tape does not match the parameters".into()));
        }
        if let Some(i) = tape.grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {} at parameter {i}",
                tape.grads[i]
            )));
        }
        self.steps += 1;
        match self.opt {
            Optimizer::Sgd { lr, momentum } => {
                for ((p, g), v) in params.iter_mut().zip(&tape.grads).zip(&mut self.first) {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = tape.grads[i];
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    params[i] -= lr * m / (v.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
