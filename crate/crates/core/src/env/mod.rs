//! Desk-scale MDPs: a deterministic 1-D chain with a sparse goal reward and a
//! 2-D point mass with a dense distance penalty, plus exact oracles.

mod oracle;

pub use oracle::{greedy_action, value_iteration, GreedyTablePolicy, OracleSolution};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::{argmax, one_hot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    ChainGrid,
    PointMass,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::ChainGrid => "chain_grid",
            EnvKind::PointMass => "point_mass",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "chain_grid" | "chain" => Some(EnvKind::ChainGrid),
            "point_mass" | "pointmass" => Some(EnvKind::PointMass),
            _ => None,
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    /// Length of the action vector (one-hot length for discrete spaces).
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }
}

pub const CHAIN_LEFT: usize = 0;
pub const CHAIN_STAY: usize = 1;
pub const CHAIN_RIGHT: usize = 2;

pub const POINT_GOAL: [f64; 2] = [0.8, 0.8];
pub const POINT_MAX_SPEED: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A deterministic MDP with a fixed horizon.
#[derive(Debug, Clone)]
pub struct Mdp {
    kind: EnvKind,
    n_states: usize,
    state_dim: usize,
    action_space: ActionSpace,
    gamma: f64,
    horizon: usize,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

pub const CHAIN_DEFAULT_STATES: usize = 10;
pub const CHAIN_DEFAULT_HORIZON: usize = 40;
pub const POINT_DEFAULT_HORIZON: usize = 60;
pub const DEFAULT_GAMMA: f64 = 0.99;

fn check_common(gamma: f64, horizon: usize) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Parameter(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if horizon == 0 {
        return Err(Error::Parameter("horizon must be at least 1".into()));
    }
    Ok(())
}

/// 1-D chain: start at the leftmost state, reward 1 on entering the
/// rightmost (absorbing) state. States are one-hot encoded.
pub fn make_chain_grid(n_states: usize, gamma: f64, horizon: usize, seed: u64) -> Result<Mdp> {
    if n_states < 3 {
        return Err(Error::Parameter(format!(
            "chain needs at least 3 states, got {n_states}"
        )));
    }
    check_common(gamma, horizon)?;
    Ok(Mdp {
        kind: EnvKind::ChainGrid,
        n_states,
        state_dim: n_states,
        action_space: ActionSpace::Discrete(3),
        gamma,
        horizon,
        rng_seed: seed,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

/// 2-D point mass on `[-1, 1]^2` steered by bounded velocity commands toward
/// the goal `(0.8, 0.8)`.
pub fn make_point_mass(gamma: f64, horizon: usize, seed: u64) -> Result<Mdp> {
    check_common(gamma, horizon)?;
    Ok(Mdp {
        kind: EnvKind::PointMass,
        n_states: 0,
        state_dim: 2,
        action_space: ActionSpace::Box {
            low: vec![-POINT_MAX_SPEED; 2],
            high: vec![POINT_MAX_SPEED; 2],
        },
        gamma,
        horizon,
        rng_seed: seed,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

/// Environment with the default desk-scale settings for `kind`.
pub fn make_default(kind: EnvKind, seed: u64) -> Mdp {
    match kind {
        EnvKind::ChainGrid => make_chain_grid(CHAIN_DEFAULT_STATES, DEFAULT_GAMMA, CHAIN_DEFAULT_HORIZON, seed),
        EnvKind::PointMass => make_point_mass(DEFAULT_GAMMA, POINT_DEFAULT_HORIZON, seed),
    }
    .expect("defaults are valid")
}

impl Mdp {
    pub fn kind(&self) -> EnvKind {
        self.kind
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn action_space(&self) -> &ActionSpace {
        &self.action_space
    }
    pub fn action_dim(&self) -> usize {
        self.action_space.dim()
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }
    /// Number of chain states (0 for continuous environments).
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn r_max(&self) -> f64 {
        match self.kind {
            EnvKind::ChainGrid => 1.0,
            EnvKind::PointMass => 8f64.sqrt(),
        }
    }

    /// Draws an initial state from the environment's own stream.
    pub fn reset(&mut self) -> Vec<f64> {
        let mut rng = self.rng.clone();
        let s = self.sample_initial(&mut rng);
        self.rng = rng;
        s
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            EnvKind::ChainGrid => self.chain_state(0),
            EnvKind::PointMass => vec![rng.random_range(-1.0..=-0.5), rng.random_range(-1.0..=-0.5)],
        }
    }

    pub fn chain_state(&self, index: usize) -> Vec<f64> {
        one_hot(index, self.n_states)
    }

    pub fn chain_index(&self, state: &[f64]) -> usize {
        argmax(state)
    }

    pub fn goal_index(&self) -> usize {
        self.n_states - 1
    }

    /// Maps an arbitrary action vector into the action space. The flag is set
    /// when the input had to be changed.
    pub fn clip_action(&self, a: &[f64]) -> (Vec<f64>, bool) {
        match &self.action_space {
            ActionSpace::Discrete(n) => {
                let k = argmax(a).min(n - 1);
                let out = one_hot(k, *n);
                let changed = a.len() != *n || a != out.as_slice();
                (out, changed)
            }
            ActionSpace::Box { low, high } => {
                let mut changed = a.len() != low.len();
                let out: Vec<f64> = (0..low.len())
                    .map(|k| {
                        let v = a.get(k).copied().unwrap_or(0.0);
                        let c = v.clamp(low[k], high[k]);
                        if c != v {
                            changed = true;
                        }
                        c
                    })
                    .collect();
                (out, changed)
            }
        }
    }

    /// Deterministic transition. `action` must already lie in the action space.
    pub fn step(&self, state: &[f64], action: &[f64]) -> StepOutcome {
        match self.kind {
            EnvKind::ChainGrid => {
                let s = self.chain_index(state);
                let goal = self.goal_index();
                if s == goal {
                    return StepOutcome {
                        next_state: self.chain_state(goal),
                        reward: 0.0,
                        done: true,
                    };
                }
                let next = match argmax(action) {
                    CHAIN_LEFT => s.saturating_sub(1),
                    CHAIN_RIGHT => s + 1,
                    _ => s,
                };
                let done = next == goal;
                StepOutcome {
                    next_state: self.chain_state(next),
                    reward: if done { 1.0 } else { 0.0 },
                    done,
                }
            }
            EnvKind::PointMass => {
                let next: Vec<f64> = (0..2).map(|k| (state[k] + action[k]).clamp(-1.0, 1.0)).collect();
                let dist = ((next[0] - POINT_GOAL[0]).powi(2) + (next[1] - POINT_GOAL[1]).powi(2)).sqrt();
                StepOutcome {
                    next_state: next,
                    reward: -dist,
                    done: false,
                }
            }
        }
    }

    /// Chain transition on indices: `(next_index, reward, done)`.
    pub fn chain_step_index(&self, s: usize, a: usize) -> (usize, f64, bool) {
        let out = self.step(&self.chain_state(s), &one_hot(a, 3));
        (self.chain_index(&out.next_state), out.reward, out.done)
    }

    /// The scripted expert: greedy optimal action on the chain, a clipped
    /// proportional controller on the point mass.
    pub fn expert_action(&self, state: &[f64]) -> Vec<f64> {
        match self.kind {
            EnvKind::ChainGrid => one_hot(CHAIN_RIGHT, 3),
            EnvKind::PointMass => proportional_controller(state, 1.0),
        }
    }

    pub fn uniform_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.action_space {
            ActionSpace::Discrete(n) => one_hot(rng.random_range(0..*n), *n),
            ActionSpace::Box { low, high } => (0..low.len()).map(|k| rng.random_range(low[k]..=high[k])).collect(),
        }
    }
}

pub fn proportional_controller(state: &[f64], gain: f64) -> Vec<f64> {
    (0..2)
        .map(|k| (gain * (POINT_GOAL[k] - state[k])).clamp(-POINT_MAX_SPEED, POINT_MAX_SPEED))
        .collect()
}

/// Anything that maps a state to an action.
pub trait Policy {
    fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64>;
}

impl<F> Policy for F
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    fn act(&self, state: &[f64], _rng: &mut ChaCha8Rng) -> Vec<f64> {
        self(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub mean_return: f64,
    /// Number of actions that fell outside the action space and were clipped.
    pub clipped_actions: usize,
}

/// Mean undiscounted return over `episodes` rollouts of at most `horizon` steps.
pub fn evaluate_policy(mdp: &Mdp, policy: &dyn Policy, episodes: usize, seed: u64) -> Result<EvalOutcome> {
    if episodes == 0 {
        return Err(Error::Parameter("episodes must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut clipped = 0;
    for _ in 0..episodes {
        let mut s = mdp.sample_initial(&mut rng);
        for _ in 0..mdp.horizon() {
            let raw = policy.act(&s, &mut rng);
            let (a, changed) = mdp.clip_action(&raw);
            clipped += changed as usize;
            let out = mdp.step(&s, &a);
            total += out.reward;
            s = out.next_state;
            if out.done {
                break;
            }
        }
    }
    Ok(EvalOutcome {
        mean_return: total / episodes as f64,
        clipped_actions: clipped,
    })
}
