//! Agent checkpoint directory: one parameter file per network role, Adam
//! moments alongside, and a JSON manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentState, HyperParams, Trainable};
use crate::error::{Error, Result};
use crate::nn::loss::PolicyHead;
use crate::nn::{
    read_params_file, read_vector_file, write_params_file, write_vector_file, Approximator, OptimMethod, OptimizerState,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimEntry {
    role: String,
    method: OptimMethod,
    step_size: f64,
    step_count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    hyper: HyperParams,
    head: PolicyHead,
    state_dim: usize,
    action_dim: usize,
    ensemble_size: usize,
    steps: u64,
    seed: u64,
    has_cloned_policy: bool,
    optimizers: Vec<OptimEntry>,
}

fn v_role(j: usize) -> String {
    format!("v_{j:03}")
}

fn write_trainable(dir: &Path, role: &str, t: &Trainable, entries: &mut Vec<OptimEntry>) -> Result<()> {
    write_params_file(&dir.join(format!("{role}.params")), &t.net, role)?;
    if t.opt.method == OptimMethod::Adam {
        write_vector_file(&dir.join(format!("{role}.adam_m")), &t.net, role, &t.opt.first_moment)?;
        write_vector_file(&dir.join(format!("{role}.adam_v")), &t.net, role, &t.opt.second_moment)?;
    }
    entries.push(OptimEntry {
        role: role.to_string(),
        method: t.opt.method,
        step_size: t.opt.step_size,
        step_count: t.opt.step_count,
    });
    Ok(())
}

fn read_net(dir: &Path, role: &str) -> Result<Approximator> {
    Ok(read_params_file(&dir.join(format!("{role}.params")))?.1)
}

fn read_trainable(dir: &Path, entry: &OptimEntry) -> Result<Trainable> {
    let net = read_net(dir, &entry.role)?;
    let mut opt = OptimizerState::new(entry.method, entry.step_size, net.params().len());
    opt.step_count = entry.step_count;
    if entry.method == OptimMethod::Adam {
        opt.first_moment = read_vector_file(&dir.join(format!("{}.adam_m", entry.role)))?.1;
        opt.second_moment = read_vector_file(&dir.join(format!("{}.adam_v", entry.role)))?.1;
    }
    Ok(Trainable { net, opt })
}

pub fn write_agent_checkpoint(dir: &Path, agent: &AgentState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    write_trainable(dir, "q", &agent.q, &mut entries)?;
    write_params_file(&dir.join("target_q.params"), &agent.target_q, "target_q")?;
    for (j, member) in agent.v.iter().enumerate() {
        write_trainable(dir, &v_role(j), member, &mut entries)?;
    }
    write_trainable(dir, "policy", &agent.policy, &mut entries)?;
    if let Some(clone) = &agent.cloned_policy {
        write_params_file(&dir.join("cloned_policy.params"), clone, "cloned_policy")?;
    }
    let manifest = Manifest {
        hyper: agent.hyper.clone(),
        head: agent.head,
        state_dim: agent.state_dim,
        action_dim: agent.action_dim,
        ensemble_size: agent.v.len(),
        steps: agent.steps,
        seed: agent.seed,
        has_cloned_policy: agent.cloned_policy.is_some(),
        optimizers: entries,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn read_agent_checkpoint(dir: &Path) -> Result<AgentState> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let find = |role: &str| {
        manifest
            .optimizers
            .iter()
            .find(|e| e.role == role)
            .ok_or_else(|| Error::Config(format!("manifest has no optimizer entry for {role}")))
    };
    let q = read_trainable(dir, find("q")?)?;
    let v = (0..manifest.ensemble_size)
        .map(|j| read_trainable(dir, find(&v_role(j))?))
        .collect::<Result<Vec<_>>>()?;
    let policy = read_trainable(dir, find("policy")?)?;
    let cloned_policy = if manifest.has_cloned_policy {
        Some(read_net(dir, "cloned_policy")?)
    } else {
        None
    };
    Ok(AgentState {
        q,
        target_q: read_net(dir, "target_q")?,
        v,
        policy,
        cloned_policy,
        hyper: manifest.hyper,
        head: manifest.head,
        state_dim: manifest.state_dim,
        action_dim: manifest.action_dim,
        steps: manifest.steps,
        seed: manifest.seed,
    })
}
