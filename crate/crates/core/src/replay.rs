//! Trajectory replay buffer ranked by the critic's mean Q value.
//!
//! Scores are computed once, when a trajectory is offered, and never change
//! afterwards. The buffer keeps the `capacity` best-scoring trajectories,
//! sorted by score (descending) with earlier insertions first among ties.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::algo::{AgentState, Batch, Source};
use crate::data::{self, Dataset, DatasetHeader, TrajectoryScore, Transition, DATASET_FORMAT_VERSION};
use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::nn::stack_rows;

pub const DEFAULT_CAPACITY: usize = 75;
pub const DEFAULT_BLEND_RATIO: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub trajectory: Vec<Transition>,
    pub score: f64,
    /// Insertion sequence number, unique within a buffer.
    pub order: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<ReplayEntry>,
    next_order: u64,
}

/// Mean of `Q(s_t, a_t)` over the trajectory under the agent's critic.
pub fn score_trajectory(agent: &AgentState, trajectory: &[Transition]) -> Result<f64> {
    if trajectory.is_empty() {
        return Err(Error::Parameter("cannot score an empty trajectory".into()));
    }
    let sd = trajectory[0].s.len();
    let ad = trajectory[0].a.len();
    let states = stack_rows(trajectory.iter().map(|t| t.s.as_slice()), sd);
    let actions = stack_rows(trajectory.iter().map(|t| t.a.as_slice()), ad);
    let q = agent.q_values(&agent.q.net, states.view(), actions.view())?;
    Ok(q.sum() / trajectory.len() as f64)
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Parameter("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            entries: Vec::new(),
            next_order: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_transitions(&self) -> usize {
        self.entries.iter().map(|e| e.trajectory.len()).sum()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    /// Scores `trajectory` with the agent's critic and offers it.
    pub fn offer(&mut self, agent: &AgentState, trajectory: &[Transition]) -> Result<bool> {
        let score = score_trajectory(agent, trajectory)?;
        Ok(self.offer_scored(trajectory.to_vec(), score))
    }

    /// Inserts a pre-scored trajectory. Returns false when it ranks below
    /// every retained entry of a full buffer, or when the trajectory is
    /// empty (the buffer is then unchanged).
    pub fn offer_scored(&mut self, trajectory: Vec<Transition>, score: f64) -> bool {
        if trajectory.is_empty() {
            return false;
        }
        if self.entries.len() == self.capacity {
            let lowest = self.entries.last().expect("full buffer").score;
            if !(score > lowest) {
                return false;
            }
        }
        let pos = self.entries.partition_point(|e| e.score >= score);
        self.entries.insert(
            pos,
            ReplayEntry {
                trajectory,
                score,
                order: self.next_order,
            },
        );
        self.next_order += 1;
        if self.entries.len() > self.capacity {
            self.entries.pop();
        }
        true
    }

    fn transition_at(&self, mut index: usize) -> &Transition {
        for e in &self.entries {
            if index < e.trajectory.len() {
                return &e.trajectory[index];
            }
            index -= e.trajectory.len();
        }
        panic!("replay index out of range")
    }
}

/// Draws `ceil(blend_ratio * batch_size)` transitions uniformly from the
/// buffer and the rest uniformly from `new_data`. An empty buffer defers to
/// `new_data` entirely, and vice versa.
pub fn sample_blend(
    buffer: &ReplayBuffer,
    new_data: &[Transition],
    batch_size: usize,
    blend_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    if batch_size < 2 {
        return Err(Error::Parameter("batch_size must be at least 2".into()));
    }
    if !(0.0..=1.0).contains(&blend_ratio) {
        return Err(Error::Parameter(format!(
            "blend_ratio must lie in [0, 1], got {blend_ratio}"
        )));
    }
    let replay_pool = buffer.n_transitions();
    if replay_pool == 0 && new_data.is_empty() {
        return Err(Error::EmptySource);
    }
    let n_replay = if replay_pool == 0 {
        0
    } else if new_data.is_empty() {
        batch_size
    } else {
        (blend_ratio * batch_size as f64).ceil() as usize
    };
    let mut items: Vec<(&Transition, Source)> = Vec::with_capacity(batch_size);
    for _ in 0..n_replay {
        items.push((buffer.transition_at(rng.random_range(0..replay_pool)), Source::Replay));
    }
    for _ in n_replay..batch_size {
        items.push((&new_data[rng.random_range(0..new_data.len())], Source::New));
    }
    Batch::from_transitions(&items)
}

/// Writes the buffer in dataset format. Record `traj_id`s are replaced by
/// the insertion order, which is unique; the header keeps each trajectory's
/// original id, score and order.
pub fn save_buffer(
    path: &Path,
    buffer: &ReplayBuffer,
    env: EnvKind,
    state_dim: usize,
    action_dim: usize,
) -> Result<()> {
    let mut transitions = Vec::with_capacity(buffer.n_transitions());
    let mut scores = Vec::with_capacity(buffer.len());
    for e in &buffer.entries {
        scores.push(TrajectoryScore {
            traj_id: e.trajectory[0].traj_id,
            score: e.score,
            order: e.order,
        });
        for t in &e.trajectory {
            let mut t = t.clone();
            t.traj_id = e.order;
            transitions.push(t);
        }
    }
    let header = DatasetHeader {
        format_version: DATASET_FORMAT_VERSION,
        env_kind: env,
        state_dim,
        action_dim,
        quality: None,
        seed: buffer.next_order,
        label: format!("replay(capacity={})", buffer.capacity),
        trajectory_scores: Some(scores),
    };
    data::save_dataset(path, &Dataset { header, transitions })
}

pub fn load_buffer(path: &Path, capacity: usize) -> Result<ReplayBuffer> {
    let ds = data::load_dataset(path)?;
    let scores = ds.header.trajectory_scores.clone().ok_or_else(|| Error::Schema {
        line: 1,
        msg: "replay file header has no trajectory scores".into(),
    })?;
    let trajs = data::trajectories(&ds.transitions);
    if trajs.len() != scores.len() {
        return Err(Error::Schema {
            line: 1,
            msg: format!("{} scores for {} trajectories", scores.len(), trajs.len()),
        });
    }
    let mut buffer = ReplayBuffer::new(capacity)?;
    for (traj, s) in trajs.into_iter().zip(scores) {
        if traj[0].traj_id != s.order {
            return Err(Error::Schema {
                line: 1,
                msg: format!("score entry {} does not match trajectory {}", s.order, traj[0].traj_id),
            });
        }
        let mut trajectory = traj.to_vec();
        for t in &mut trajectory {
            t.traj_id = s.traj_id;
        }
        buffer.entries.push(ReplayEntry {
            trajectory,
            score: s.score,
            order: s.order,
        });
    }
    buffer.next_order = ds.header.seed;
    Ok(buffer)
}
