//! Loss primitives shared by the agents.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LossEval;
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "expectile threshold must lie in (0, 1), got {tau}"
        )))
    }
}

/// Asymmetric weight `|tau - 1(u < 0)|`. At `u = 0` the `tau` branch is taken.
#[inline]
pub fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// `|tau - 1(u < 0)| * u^2`.
pub fn expectile_loss(u: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(expectile_weight(u, tau) * u * u)
}

/// Derivative of [`expectile_loss`] with respect to `u`.
#[inline]
pub fn expectile_grad(u: f64, tau: f64) -> f64 {
    2.0 * expectile_weight(u, tau) * u
}

/// Mean expectile loss of residuals `target - prediction`, differentiated with
/// respect to the prediction column.
pub fn expectile_regression(
    predictions: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    tau: f64,
) -> Result<LossEval> {
    check_tau(tau)?;
    let n = predictions.nrows();
    let mut value = 0.0;
    let mut d = Array2::zeros(predictions.dim());
    for i in 0..n {
        let u = targets[i] - predictions[[i, 0]];
        value += expectile_weight(u, tau) * u * u;
        d[[i, 0]] = -expectile_grad(u, tau) / n as f64;
    }
    Ok(LossEval {
        value: value / n as f64,
        d_output: d,
    })
}

/// Mean squared error `mean((target - prediction)^2)` on a single output column.
pub fn squared_error(predictions: ArrayView2<'_, f64>, targets: ArrayView1<'_, f64>) -> LossEval {
    let n = predictions.nrows();
    let mut value = 0.0;
    let mut d = Array2::zeros(predictions.dim());
    for i in 0..n {
        let r = predictions[[i, 0]] - targets[i];
        value += r * r;
        d[[i, 0]] = 2.0 * r / n as f64;
    }
    LossEval {
        value: value / n as f64,
        d_output: d,
    }
}

/// How a policy network's raw outputs parameterize an action distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicyHead {
    /// Softmax over `n` logits; actions are one-hot vectors.
    Categorical { n: usize },
    /// Diagonal Gaussian; outputs are `dim` means then `dim` raw log-stds.
    Gaussian { dim: usize },
}

impl PolicyHead {
    pub fn output_dim(self) -> usize {
        match self {
            PolicyHead::Categorical { n } => n,
            PolicyHead::Gaussian { dim } => 2 * dim,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            PolicyHead::Categorical { n } => n,
            PolicyHead::Gaussian { dim } => dim,
        }
    }

    /// `log pi(action | outputs)` in closed form.
    pub fn log_prob(self, out: ArrayView1<'_, f64>, action: &[f64]) -> f64 {
        match self {
            PolicyHead::Categorical { .. } => {
                let lse = log_sum_exp(out);
                out[argmax(action)] - lse
            }
            PolicyHead::Gaussian { dim } => {
                let mut lp = 0.0;
                for k in 0..dim {
                    let log_std = out[dim + k].clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let z = (action[k] - out[k]) / log_std.exp();
                    lp += -0.5 * z * z - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln();
                }
                lp
            }
        }
    }

    /// Gradient of `log pi(action | outputs)` with respect to the outputs.
    pub fn d_log_prob(self, out: ArrayView1<'_, f64>, action: &[f64], grad: &mut [f64]) {
        match self {
            PolicyHead::Categorical { n } => {
                let probs = softmax(out);
                let a = argmax(action);
                for k in 0..n {
                    grad[k] = if k == a { 1.0 } else { 0.0 } - probs[k];
                }
            }
            PolicyHead::Gaussian { dim } => {
                for k in 0..dim {
                    let raw = out[dim + k];
                    let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let var = (2.0 * log_std).exp();
                    let diff = action[k] - out[k];
                    grad[k] = diff / var;
                    grad[dim + k] = if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                        diff * diff / var - 1.0
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    /// Most likely action: one-hot argmax or the Gaussian mean.
    pub fn mode(self, out: ArrayView1<'_, f64>) -> Vec<f64> {
        match self {
            PolicyHead::Categorical { n } => one_hot(argmax_view(out), n),
            PolicyHead::Gaussian { dim } => out.iter().take(dim).copied().collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, out: ArrayView1<'_, f64>, rng: &mut R) -> Vec<f64> {
        match self {
            PolicyHead::Categorical { n } => {
                let probs = softmax(out);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return one_hot(k, n);
                    }
                }
                one_hot(n - 1, n)
            }
            PolicyHead::Gaussian { dim } => (0..dim)
                .map(|k| {
                    let std = out[dim + k].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                    let eps: f64 = rng.sample(StandardNormal);
                    out[k] + std * eps
                })
                .collect(),
        }
    }
}

/// Weighted negative log-likelihood `-(1/n) sum_i w_i log pi(a_i | s_i)`.
///
/// `outputs` are the raw policy outputs per row.
pub fn weighted_nll(
    head: PolicyHead,
    outputs: ArrayView2<'_, f64>,
    actions: &[Vec<f64>],
    weights: &[f64],
    normalizer: usize,
) -> LossEval {
    let mut value = 0.0;
    let mut d = Array2::zeros(outputs.dim());
    let mut g = vec![0.0; outputs.ncols()];
    let scale = 1.0 / normalizer as f64;
    for (i, (a, &w)) in actions.iter().zip(weights).enumerate() {
        let row = outputs.row(i);
        value -= w * head.log_prob(row, a);
        head.d_log_prob(row, a, &mut g);
        for (k, gk) in g.iter().enumerate() {
            d[[i, k]] = -w * gk * scale;
        }
    }
    LossEval {
        value: value * scale,
        d_output: d,
    }
}

pub fn log_sum_exp(x: ArrayView1<'_, f64>) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(x: ArrayView1<'_, f64>) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn one_hot(k: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

fn argmax_view(x: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}
