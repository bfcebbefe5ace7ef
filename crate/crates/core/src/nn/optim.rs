use serde::{Deserialize, Serialize};

use super::{Approximator, GradientTape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimMethod {
    Sgd,
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First-order optimizer bound to one network's parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub method: OptimMethod,
    pub step_size: f64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn sgd(step_size: f64) -> Self {
        OptimizerState {
            method: OptimMethod::Sgd,
            step_size,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step_count: 0,
        }
    }

    pub fn adam(step_size: f64, n_params: usize) -> Self {
        OptimizerState {
            method: OptimMethod::Adam,
            step_size,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
        }
    }

    pub fn new(method: OptimMethod, step_size: f64, n_params: usize) -> Self {
        match method {
            OptimMethod::Sgd => Self::sgd(step_size),
            OptimMethod::Adam => Self::adam(step_size, n_params),
        }
    }

    /// Applies one update in place. Nothing is modified on error.
    pub fn step(&mut self, net: &mut Approximator, tape: &GradientTape) -> Result<()> {
        let n = net.params().len();
        if tape.param_grads.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: tape.param_grads.len(),
            });
        }
        if let Some(index) = tape.param_grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                index,
                what: "parameter gradient".into(),
            });
        }
        match self.method {
            OptimMethod::Sgd => {
                for (p, g) in net.params_mut().iter_mut().zip(&tape.param_grads) {
                    *p -= self.step_size * g;
                }
            }
            OptimMethod::Adam => {
                if self.first_moment.len() != n || self.second_moment.len() != n {
                    return Err(Error::Shape {
                        expected: n,
                        got: self.first_moment.len(),
                    });
                }
                let t = (self.step_count + 1) as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                let params = net.params_mut();
                for i in 0..n {
                    let g = tape.param_grads[i];
                    let m = BETA1 * self.first_moment[i] + (1.0 - BETA1) * g;
                    let v = BETA2 * self.second_moment[i] + (1.0 - BETA2) * g * g;
                    self.first_moment[i] = m;
                    self.second_moment[i] = v;
                    params[i] -= self.step_size * (m / c1) / ((v / c2).sqrt() + EPS);
                }
            }
        }
        self.step_count += 1;
        Ok(())
    }
}
