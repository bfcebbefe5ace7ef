//! Offline RL learners: CQL, IQL and its ensemble variant with an optional
//! frozen policy clone.
//!
//! All three share one [`AgentState`]. IQL is the ensemble learner with a
//! single value network. CQL ignores the value ensemble and trains its actor
//! against the critic with an entropy bonus.

mod checkpoint;
mod losses;

pub use checkpoint::{read_agent_checkpoint, write_agent_checkpoint};
pub use losses::{
    awr_policy_loss, awr_policy_tape, awr_weight, cql_penalty, cql_policy_loss, cql_policy_tape, cql_q_loss,
    cql_q_tape, iql_q_loss, iql_q_tape, iql_v_loss, iql_v_tapes, CqlTerms,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Transition;
use crate::env::{ActionSpace, EnvKind, Mdp, Policy};
use crate::error::{Error, Result};
use crate::nn::loss::{argmax, one_hot, PolicyHead};
use crate::nn::{hcat, stack_rows, Activation, Approximator, OptimMethod, OptimizerState};
use crate::seed::{derive, offset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Cql,
    Iql,
    Eiql,
}

impl Algorithm {
    pub fn uses_value_ensemble(self) -> bool {
        !matches!(self, Algorithm::Cql)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// Expectile threshold for the value regression.
    pub tau: f64,
    /// Advantage weighting coefficient of the policy regression.
    pub alpha_awr: f64,
    /// Weight of the conservative term in CQL.
    pub alpha_cql: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// Polyak rate for the target critic.
    pub target_update_rate: f64,
    /// Upper bound on `alpha_awr * advantage` before exponentiation.
    pub adv_clip: f64,
    pub learning_rate: f64,
    /// Policy samples per state for CQL expectations on continuous actions.
    pub cql_samples: usize,
    /// Entropy coefficient of the CQL actor.
    pub cql_entropy: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            tau: 0.8,
            alpha_awr: 3.0,
            alpha_cql: 1.0,
            gamma: 0.99,
            batch_size: 64,
            target_update_rate: 5e-3,
            adv_clip: 20.0,
            learning_rate: 3e-4,
            cql_samples: 4,
            cql_entropy: 0.1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(self.alpha_awr >= 0.0) {
            return bad("alpha_awr must be non-negative");
        }
        if !(self.alpha_cql >= 0.0) {
            return bad("alpha_cql must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.target_update_rate > 0.0 && self.target_update_rate <= 1.0) {
            return bad("target_update_rate must lie in (0, 1]");
        }
        if !(self.adv_clip > 0.0) {
            return bad("adv_clip must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.cql_samples == 0 {
            return bad("cql_samples must be positive");
        }
        if !(self.cql_entropy >= 0.0) {
            return bad("cql_entropy must be non-negative");
        }
        Ok(())
    }
}

/// Sizes and seeding of a freshly built agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub ensemble_size: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimMethod,
    pub hyper: HyperParams,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            ensemble_size: 30,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            optimizer: OptimMethod::Adam,
            hyper: HyperParams::default(),
        }
    }
}

/// A trainable network and the optimizer state bound to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainable {
    pub net: Approximator,
    pub opt: OptimizerState,
}

impl Trainable {
    fn new(net: Approximator, method: OptimMethod, lr: f64) -> Self {
        let opt = OptimizerState::new(method, lr, net.params().len());
        Trainable { net, opt }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub q: Trainable,
    pub target_q: Approximator,
    pub v: Vec<Trainable>,
    pub policy: Trainable,
    /// Frozen copy of the policy taken at a dataset boundary.
    pub cloned_policy: Option<Approximator>,
    pub hyper: HyperParams,
    pub head: PolicyHead,
    pub state_dim: usize,
    pub action_dim: usize,
    pub steps: u64,
    pub seed: u64,
}

/// A training batch in matrix form. `sources` records where each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array1<f64>,
    pub sources: Vec<Source>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    New,
    Replay,
}

impl Batch {
    pub fn from_transitions(items: &[(&Transition, Source)]) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptySource)?.0;
        let (sd, ad) = (first.s.len(), first.a.len());
        let states = stack_rows(items.iter().map(|(t, _)| t.s.as_slice()), sd);
        let actions = stack_rows(items.iter().map(|(t, _)| t.a.as_slice()), ad);
        let next_states = stack_rows(items.iter().map(|(t, _)| t.s_next.as_slice()), sd);
        let rewards = items.iter().map(|(t, _)| t.r).collect();
        let dones = items.iter().map(|(t, _)| if t.done { 1.0 } else { 0.0 }).collect();
        Ok(Batch {
            states,
            actions,
            rewards,
            next_states,
            dones,
            sources: items.iter().map(|(_, s)| *s).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_actions(&self) -> Array2<f64> {
        hcat(self.states.view(), self.actions.view())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Mean value loss over ensemble members (absent for CQL).
    pub v_loss: Option<f64>,
    pub q_loss: f64,
    pub policy_loss: f64,
    /// Batch mean of the ensemble minimum value (absent for CQL, which does
    /// not train the value ensemble).
    pub mean_min_v: Option<f64>,
}

pub fn policy_head_for(space: &ActionSpace) -> PolicyHead {
    match space {
        ActionSpace::Discrete(n) => PolicyHead::Categorical { n: *n },
        ActionSpace::Box { low, .. } => PolicyHead::Gaussian { dim: low.len() },
    }
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = Vec::with_capacity(hidden.len() + 2);
    d.push(input);
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

impl AgentState {
    pub fn new(mdp: &Mdp, config: &AgentConfig, seed: u64) -> Result<Self> {
        Self::with_dims(mdp.state_dim(), policy_head_for(mdp.action_space()), config, seed)
    }

    pub fn with_dims(state_dim: usize, head: PolicyHead, config: &AgentConfig, seed: u64) -> Result<Self> {
        config.hyper.validate()?;
        if config.ensemble_size == 0 {
            return Err(Error::Parameter("ensemble size must be at least 1".into()));
        }
        let action_dim = head.action_dim();
        let act = config.activation;
        let (method, lr) = (config.optimizer, config.hyper.learning_rate);
        let q_net = Approximator::new(
            &dims(state_dim + action_dim, &config.hidden, 1),
            act,
            derive(seed, offset::Q_NET, 0),
        )?;
        let v = (0..config.ensemble_size)
            .map(|j| {
                Approximator::new(
                    &dims(state_dim, &config.hidden, 1),
                    act,
                    derive(seed, offset::V_NET, j as u64),
                )
                .map(|n| Trainable::new(n, method, lr))
            })
            .collect::<Result<Vec<_>>>()?;
        let policy = Approximator::new(
            &dims(state_dim, &config.hidden, head.output_dim()),
            act,
            derive(seed, offset::POLICY, 0),
        )?;
        Ok(AgentState {
            target_q: q_net.clone(),
            q: Trainable::new(q_net, method, lr),
            v,
            policy: Trainable::new(policy, method, lr),
            cloned_policy: None,
            hyper: config.hyper.clone(),
            head,
            state_dim,
            action_dim,
            steps: 0,
            seed,
        })
    }

    pub fn ensemble_size(&self) -> usize {
        self.v.len()
    }

    /// Freezes a copy of the current policy.
    pub fn clone_policy(&mut self) {
        self.cloned_policy = Some(self.policy.net.clone());
    }

    pub fn q_values(
        &self,
        net: &Approximator,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
    ) -> Result<Array1<f64>> {
        let out = net.forward_batch(hcat(states, actions).view())?;
        Ok(out.column(0).to_owned())
    }

    pub fn q_value(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let mut x = s.to_vec();
        x.extend_from_slice(a);
        Ok(self.q.net.forward(&x)?[0])
    }

    /// Per-state minimum over the value ensemble.
    pub fn min_v_batch(&self, states: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let mut min = Array1::from_elem(states.nrows(), f64::INFINITY);
        for member in &self.v {
            let out = member.net.forward_batch(states)?;
            for (m, v) in min.iter_mut().zip(out.column(0)) {
                if *v < *m {
                    *m = *v;
                }
            }
        }
        Ok(min)
    }

    pub fn min_v(&self, s: &[f64]) -> Result<f64> {
        let view = ArrayView2::from_shape((1, s.len()), s).expect("row");
        Ok(self.min_v_batch(view)?[0])
    }

    pub fn policy_mode(&self, s: &[f64]) -> Result<Vec<f64>> {
        let out = self.policy.net.forward(s)?;
        Ok(self.head.mode(ndarray::ArrayView1::from(&out)))
    }

    /// Modes of `net` (a policy or its clone) for every row of `states`.
    pub fn modes(&self, net: &Approximator, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let out = net.forward_batch(states)?;
        let rows: Vec<Vec<f64>> = out.axis_iter(Axis(0)).map(|r| self.head.mode(r)).collect();
        Ok(stack_rows(rows.iter().map(|r| r.as_slice()), self.action_dim))
    }

    /// Best action under the current critic. Discrete spaces are searched
    /// exhaustively, continuous ones over `candidates`.
    pub fn greedy_q_action(&self, s: &[f64], candidates: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
        let owned;
        let cands: &[Vec<f64>] = match self.head {
            PolicyHead::Categorical { n } => {
                owned = (0..n).map(|k| one_hot(k, n)).collect::<Vec<_>>();
                &owned
            }
            PolicyHead::Gaussian { .. } => candidates,
        };
        if cands.is_empty() {
            return Err(Error::Parameter("no candidate actions".into()));
        }
        let states = stack_rows(std::iter::repeat_n(s, cands.len()), self.state_dim);
        let actions = stack_rows(cands.iter().map(|c| c.as_slice()), self.action_dim);
        let q = self.q_values(&self.q.net, states.view(), actions.view())?;
        let best = argmax(q.as_slice().unwrap());
        Ok((cands[best].clone(), q[best]))
    }

    /// One gradient step on every network the algorithm trains.
    ///
    /// Order: value ensemble, critic, target critic, policy. On error the
    /// agent is restored to its state before the call.
    pub fn train_step(&mut self, batch: &Batch, algorithm: Algorithm, rng: &mut ChaCha8Rng) -> Result<StepDiagnostics> {
        if batch.is_empty() {
            return Err(Error::EmptySource);
        }
        let snapshot = self.clone();
        let result = self.train_step_inner(batch, algorithm, rng);
        if result.is_err() {
            *self = snapshot;
        }
        result
    }

    fn train_step_inner(
        &mut self,
        batch: &Batch,
        algorithm: Algorithm,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepDiagnostics> {
        let rate = self.hyper.target_update_rate;
        match algorithm {
            Algorithm::Iql | Algorithm::Eiql => {
                let v_tapes = losses::iql_v_tapes(self, batch)?;
                let v_loss = v_tapes.iter().map(|t| t.loss_value).sum::<f64>() / v_tapes.len() as f64;
                for (member, tape) in self.v.iter_mut().zip(&v_tapes) {
                    member.opt.step(&mut member.net, tape)?;
                }
                let q_tape = losses::iql_q_tape(self, batch)?;
                self.q.opt.step(&mut self.q.net, &q_tape)?;
                self.target_q.soft_update_from(&self.q.net, rate);
                let (pi_tape, mean_min_v) = losses::awr_policy_tape(self, batch)?;
                self.policy.opt.step(&mut self.policy.net, &pi_tape)?;
                self.steps += 1;
                Ok(StepDiagnostics {
                    v_loss: Some(v_loss),
                    q_loss: q_tape.loss_value,
                    policy_loss: pi_tape.loss_value,
                    mean_min_v: Some(mean_min_v),
                })
            }
            Algorithm::Cql => {
                let (q_tape, _) = losses::cql_q_tape(self, batch, rng)?;
                self.q.opt.step(&mut self.q.net, &q_tape)?;
                self.target_q.soft_update_from(&self.q.net, rate);
                let pi_tape = losses::cql_policy_tape(self, batch, rng)?;
                self.policy.opt.step(&mut self.policy.net, &pi_tape)?;
                self.steps += 1;
                Ok(StepDiagnostics {
                    v_loss: None,
                    q_loss: q_tape.loss_value,
                    policy_loss: pi_tape.loss_value,
                    mean_min_v: None,
                })
            }
        }
    }

    /// Deterministic policy view (distribution mode) for evaluation.
    pub fn greedy_policy(&self) -> AgentPolicy<'_> {
        AgentPolicy { agent: self }
    }
}

pub struct AgentPolicy<'a> {
    agent: &'a AgentState,
}

impl Policy for AgentPolicy<'_> {
    fn act(&self, state: &[f64], _rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.agent
            .policy_mode(state)
            .expect("policy input matches state dimension")
    }
}

/// Convenience for tests and tools: an RNG for step `i` of a run seeded `seed`.
pub fn batch_rng(seed: u64, i: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, offset::BATCH, i))
}

/// Environment kind a trained agent is compatible with, inferred from its head.
pub fn env_kind_for_head(head: PolicyHead) -> EnvKind {
    match head {
        PolicyHead::Categorical { .. } => EnvKind::ChainGrid,
        PolicyHead::Gaussian { .. } => EnvKind::PointMass,
    }
}
