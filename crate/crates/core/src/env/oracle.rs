use rand_chacha::ChaCha8Rng;

use super::{evaluate_policy, EnvKind, Mdp, Policy};
use crate::error::{Error, Result};
use crate::nn::loss::one_hot;

/// Exact solution of a finite MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// `q_table[s][a]`.
    pub q_table: Vec<Vec<f64>>,
    pub v_table: Vec<f64>,
    /// Undiscounted return of the greedy policy from the initial state.
    pub optimal_return: f64,
}

const SWEEP_LIMIT: usize = 1_000_000;
const TOLERANCE: f64 = 1e-12;

/// Greedy action with ties resolved toward the lowest index.
pub fn greedy_action(q_row: &[f64]) -> usize {
    crate::nn::loss::argmax(q_row)
}

/// Bellman optimality iteration on the chain until the sup-norm change
/// drops below `1e-12`.
pub fn value_iteration(mdp: &Mdp) -> Result<OracleSolution> {
    if mdp.kind() != EnvKind::ChainGrid {
        return Err(Error::UnsupportedEnv(format!(
            "value iteration needs a finite MDP, got {}",
            mdp.kind()
        )));
    }
    let n = mdp.n_states();
    let transitions: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|s| {
            (0..3)
                .map(|a| {
                    let (next, r, _) = mdp.chain_step_index(s, a);
                    (next, r)
                })
                .collect()
        })
        .collect();
    let gamma = mdp.gamma();
    let mut q = vec![vec![0.0; 3]; n];
    for _ in 0..SWEEP_LIMIT {
        let v: Vec<f64> = q.iter().map(|row| row[greedy_action(row)]).collect();
        let mut delta: f64 = 0.0;
        for s in 0..n {
            for a in 0..3 {
                let (next, r) = transitions[s][a];
                let new = r + gamma * v[next];
                delta = delta.max((new - q[s][a]).abs());
                q[s][a] = new;
            }
        }
        if delta < TOLERANCE {
            break;
        }
    }
    let v_table: Vec<f64> = q.iter().map(|row| row[greedy_action(row)]).collect();
    let policy = GreedyTablePolicy { q_table: q.clone() };
    let optimal_return = evaluate_policy(mdp, &policy, 1, 0)?.mean_return;
    Ok(OracleSolution {
        q_table: q,
        v_table,
        optimal_return,
    })
}

/// Acts greedily with respect to a tabular Q function on the chain.
#[derive(Debug, Clone)]
pub struct GreedyTablePolicy {
    pub q_table: Vec<Vec<f64>>,
}

impl Policy for GreedyTablePolicy {
    fn act(&self, state: &[f64], _rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = crate::nn::loss::argmax(state);
        one_hot(greedy_action(&self.q_table[s]), 3)
    }
}
