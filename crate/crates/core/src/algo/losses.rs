use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{AgentState, Batch};
use crate::error::{Error, Result};
use crate::nn::loss::{
    expectile_regression, log_sum_exp, one_hot, softmax, squared_error, PolicyHead, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::nn::{hcat, stack_rows, GradientTape, LossEval};

/// `exp(min(alpha * advantage, clip))`.
pub fn awr_weight(advantage: f64, alpha: f64, clip: f64) -> f64 {
    (alpha * advantage).min(clip).exp()
}

/// Conservative term `mean_i sum_k w_ik q_ik - mean_i q_data_i`, where row
/// `i` of `q_policy` holds critic values at policy actions for state `i` and
/// `weights` their probabilities (or `1/K` for sampled actions).
pub fn cql_penalty(q_policy: ArrayView2<'_, f64>, weights: ArrayView2<'_, f64>, q_data: ArrayView1<'_, f64>) -> f64 {
    let n = q_data.len() as f64;
    let policy_term = (&q_policy * &weights).sum() / n;
    policy_term - q_data.sum() / n
}

fn check_finite(values: ArrayView1<'_, f64>, what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::Numeric {
            index,
            what: what.to_string(),
        }),
        None => Ok(()),
    }
}

// ---- IQL / ensemble IQL ---------------------------------------------------

pub fn iql_v_tapes(agent: &AgentState, batch: &Batch) -> Result<Vec<GradientTape>> {
    let q_target = agent.q_values(&agent.target_q, batch.states.view(), batch.actions.view())?;
    check_finite(q_target.view(), "target critic")?;
    agent
        .v
        .iter()
        .map(|member| {
            member.net.backward(batch.states.view(), |out| {
                expectile_regression(out, q_target.view(), agent.hyper.tau)
            })
        })
        .collect()
}

/// Expectile loss of each ensemble member against the target critic.
pub fn iql_v_loss(agent: &AgentState, batch: &Batch) -> Result<Vec<f64>> {
    Ok(iql_v_tapes(agent, batch)?.into_iter().map(|t| t.loss_value).collect())
}

fn iql_targets(agent: &AgentState, batch: &Batch) -> Result<Array1<f64>> {
    let min_v_next = agent.min_v_batch(batch.next_states.view())?;
    let gamma = agent.hyper.gamma;
    let targets = &batch.rewards + &((1.0 - &batch.dones) * &min_v_next * gamma);
    check_finite(targets.view(), "value target")?;
    Ok(targets)
}

pub fn iql_q_tape(agent: &AgentState, batch: &Batch) -> Result<GradientTape> {
    let targets = iql_targets(agent, batch)?;
    agent.q.net.backward(batch.state_actions().view(), |out| {
        Ok(squared_error(out, targets.view()))
    })
}

/// `mean (r + gamma (1 - done) min_j V_j(s') - Q(s, a))^2`.
pub fn iql_q_loss(agent: &AgentState, batch: &Batch) -> Result<f64> {
    Ok(iql_q_tape(agent, batch)?.loss_value)
}

/// Advantage-weighted negative log-likelihood. With a cloned policy the
/// clone's mode at each batch state is added as a second weighted target.
pub fn awr_policy_tape(agent: &AgentState, batch: &Batch) -> Result<(GradientTape, f64)> {
    let h = &agent.hyper;
    let states = batch.states.view();
    let min_v = agent.min_v_batch(states)?;
    let q_data = agent.q_values(&agent.target_q, states, batch.actions.view())?;
    let adv = &q_data - &min_v;
    check_finite(adv.view(), "advantage")?;
    let weights: Vec<f64> = adv.iter().map(|&d| awr_weight(d, h.alpha_awr, h.adv_clip)).collect();

    let cloned = match &agent.cloned_policy {
        Some(clone) => {
            let modes = agent.modes(clone, states)?;
            let q_clone = agent.q_values(&agent.target_q, states, modes.view())?;
            let adv_clone = &q_clone - &min_v;
            check_finite(adv_clone.view(), "cloned-action advantage")?;
            let w: Vec<f64> = adv_clone
                .iter()
                .map(|&d| awr_weight(d, h.alpha_awr, h.adv_clip))
                .collect();
            Some((modes, w))
        }
        None => None,
    };

    let head = agent.head;
    let n = batch.len();
    let tape = agent.policy.net.backward(states, |out| {
        let mut value = 0.0;
        let mut d = Array2::zeros(out.dim());
        let mut g = vec![0.0; out.ncols()];
        let scale = 1.0 / n as f64;
        for i in 0..n {
            let row = out.row(i);
            let a = batch.actions.row(i).to_vec();
            value -= weights[i] * head.log_prob(row, &a);
            head.d_log_prob(row, &a, &mut g);
            for (k, gk) in g.iter().enumerate() {
                d[[i, k]] -= weights[i] * gk * scale;
            }
            if let Some((modes, w)) = &cloned {
                let a2 = modes.row(i).to_vec();
                value -= w[i] * head.log_prob(row, &a2);
                head.d_log_prob(row, &a2, &mut g);
                for (k, gk) in g.iter().enumerate() {
                    d[[i, k]] -= w[i] * gk * scale;
                }
            }
        }
        Ok(LossEval {
            value: value * scale,
            d_output: d,
        })
    })?;
    Ok((tape, min_v.mean().unwrap_or(0.0)))
}

/// Policy loss for the IQL family (advantage from the target critic minus
/// the ensemble minimum).
pub fn awr_policy_loss(agent: &AgentState, batch: &Batch) -> Result<f64> {
    Ok(awr_policy_tape(agent, batch)?.0.loss_value)
}

// ---- CQL -----------------------------------------------------------------

/// Components of the CQL critic loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqlTerms {
    pub penalty: f64,
    /// `0.5 * mean squared TD error`.
    pub td: f64,
    pub total: f64,
}

/// Policy actions for every state with their expectation weights: every
/// discrete action weighted by its probability, or `k` samples weighted `1/k`.
fn policy_actions(
    agent: &AgentState,
    states: ArrayView2<'_, f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<Vec<f64>>>, Array2<f64>)> {
    let out = agent.policy.net.forward_batch(states)?;
    match agent.head {
        PolicyHead::Categorical { n } => {
            let actions = vec![(0..n).map(|k| one_hot(k, n)).collect::<Vec<_>>(); states.nrows()];
            let mut w = Array2::zeros((states.nrows(), n));
            for (i, row) in out.axis_iter(Axis(0)).enumerate() {
                for (k, p) in softmax(row).into_iter().enumerate() {
                    w[[i, k]] = p;
                }
            }
            Ok((actions, w))
        }
        PolicyHead::Gaussian { .. } => {
            let k = agent.hyper.cql_samples;
            let actions = out
                .axis_iter(Axis(0))
                .map(|row| (0..k).map(|_| agent.head.sample(row, rng)).collect())
                .collect();
            Ok((actions, Array2::from_elem((states.nrows(), k), 1.0 / k as f64)))
        }
    }
}

fn state_action_rows(states: ArrayView2<'_, f64>, actions: &[Vec<Vec<f64>>], sd: usize, ad: usize) -> Array2<f64> {
    let mut rows = Vec::new();
    for (i, acts) in actions.iter().enumerate() {
        for a in acts {
            let mut r = states.row(i).to_vec();
            r.extend_from_slice(a);
            rows.push(r);
        }
    }
    stack_rows(rows.iter().map(|r| r.as_slice()), sd + ad)
}

pub fn cql_q_tape(agent: &AgentState, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<(GradientTape, CqlTerms)> {
    let (sd, ad) = (agent.state_dim, agent.action_dim);
    let n = batch.len();
    let h = &agent.hyper;

    let (next_actions, next_w) = policy_actions(agent, batch.next_states.view(), rng)?;
    let per_state = next_w.ncols();
    let next_rows = state_action_rows(batch.next_states.view(), &next_actions, sd, ad);
    let q_next = agent.target_q.forward_batch(next_rows.view())?;
    let q_next = q_next
        .into_shape_with_order((n, per_state))
        .expect("one row per sampled action");
    let expected_next = (&q_next * &next_w).sum_axis(Axis(1));
    let targets = &batch.rewards + &((1.0 - &batch.dones) * &expected_next * h.gamma);
    check_finite(targets.view(), "CQL target")?;

    let (pi_actions, pi_w) = policy_actions(agent, batch.states.view(), rng)?;
    let k = pi_w.ncols();
    let pi_rows = state_action_rows(batch.states.view(), &pi_actions, sd, ad);
    let all = ndarray::concatenate(Axis(0), &[batch.state_actions().view(), pi_rows.view()]).expect("same width");

    let alpha = h.alpha_cql;
    let mut terms = None;
    let tape = agent.q.net.backward(all.view(), |out| {
        let q_data = out.slice(ndarray::s![..n, 0]);
        let q_pi = out
            .slice(ndarray::s![n.., 0])
            .to_owned()
            .into_shape_with_order((n, k))
            .expect("k actions per state");
        let penalty = cql_penalty(q_pi.view(), pi_w.view(), q_data);
        let resid = &q_data - &targets;
        let td = 0.5 * resid.mapv(|r| r * r).sum() / n as f64;
        let mut d = Array2::zeros(out.dim());
        for i in 0..n {
            d[[i, 0]] = -alpha / n as f64 + resid[i] / n as f64;
            for j in 0..k {
                d[[n + i * k + j, 0]] = alpha * pi_w[[i, j]] / n as f64;
            }
        }
        terms = Some(CqlTerms {
            penalty,
            td,
            total: alpha * penalty + td,
        });
        Ok(LossEval {
            value: alpha * penalty + td,
            d_output: d,
        })
    })?;
    Ok((tape, terms.expect("loss closure ran")))
}

/// `alpha_cql * (E_pi Q - E_data Q) + 0.5 * mean squared TD error`, with the
/// TD target `r + gamma (1 - done) E_{a' ~ pi} Q_target(s', a')`.
pub fn cql_q_loss(agent: &AgentState, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<CqlTerms> {
    Ok(cql_q_tape(agent, batch, rng)?.1)
}

/// Entropy-regularized actor update against the current critic:
/// `mean_s E_{a ~ pi}[beta log pi(a|s) - Q(s, a)]`. Exact over discrete
/// actions, reparameterized with one Gaussian sample otherwise.
pub fn cql_policy_tape(agent: &AgentState, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<GradientTape> {
    let beta = agent.hyper.cql_entropy;
    let states = batch.states.view();
    let n = batch.len();
    let (sd, ad) = (agent.state_dim, agent.action_dim);
    match agent.head {
        PolicyHead::Categorical { n: na } => {
            let acts = vec![(0..na).map(|k| one_hot(k, na)).collect::<Vec<_>>(); n];
            let rows = state_action_rows(states, &acts, sd, ad);
            let q = agent
                .q
                .net
                .forward_batch(rows.view())?
                .into_shape_with_order((n, na))
                .expect("one row per action");
            agent.policy.net.backward(states, |out| {
                let mut value = 0.0;
                let mut d = Array2::zeros(out.dim());
                for i in 0..n {
                    let row = out.row(i);
                    let lse = log_sum_exp(row);
                    let probs = softmax(row);
                    let g: Vec<f64> = (0..na).map(|a| beta * (row[a] - lse) - q[[i, a]]).collect();
                    let mean_g: f64 = probs.iter().zip(&g).map(|(p, g)| p * g).sum();
                    value += mean_g;
                    for a in 0..na {
                        d[[i, a]] = probs[a] * (g[a] - mean_g) / n as f64;
                    }
                }
                Ok(LossEval {
                    value: value / n as f64,
                    d_output: d,
                })
            })
        }
        PolicyHead::Gaussian { dim } => {
            let out = agent.policy.net.forward_batch(states)?;
            let eps: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let actions: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..dim)
                        .map(|k| {
                            let std = out[[i, dim + k]].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                            out[[i, k]] + std * eps[i][k]
                        })
                        .collect()
                })
                .collect();
            let acts = stack_rows(actions.iter().map(|a| a.as_slice()), dim);
            let x = hcat(states, acts.view());
            let mut q_vals = Array1::zeros(n);
            let (_, dx) = agent.q.net.backward_with_input_grad(x.view(), |o| {
                q_vals = o.column(0).to_owned();
                Ok(LossEval {
                    value: 0.0,
                    d_output: Array2::ones(o.dim()),
                })
            })?;
            agent.policy.net.backward(states, |o| {
                let mut value = 0.0;
                let mut d = Array2::zeros(o.dim());
                for i in 0..n {
                    let row = o.row(i);
                    let lp = agent.head.log_prob(row, &actions[i]);
                    value += beta * lp - q_vals[i];
                    for k in 0..dim {
                        let dq = dx[[i, sd + k]];
                        let raw = row[dim + k];
                        let std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                        d[[i, k]] = -dq / n as f64;
                        d[[i, dim + k]] = if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                            (-beta - dq * std * eps[i][k]) / n as f64
                        } else {
                            0.0
                        };
                    }
                }
                Ok(LossEval {
                    value: value / n as f64,
                    d_output: d,
                })
            })
        }
    }
}

/// Value of the CQL actor objective (see [`cql_policy_tape`]).
pub fn cql_policy_loss(agent: &AgentState, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<f64> {
    Ok(cql_policy_tape(agent, batch, rng)?.loss_value)
}
