//! Browser demo bindings: expectile regression on a sample set, ensemble
//! pessimism at initialization, and a live two-dataset chain run that shows
//! the greedy action at the start state surviving or flipping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use dicorl::algo::{AgentConfig, AgentState};
use dicorl::continual::{default_probes, RunAlgorithm};
use dicorl::data::{generate_dataset, trajectories, DatasetSpec, Transition};
use dicorl::env::{evaluate_policy, make_default, EnvKind, Mdp, CHAIN_RIGHT};
use dicorl::nn::loss::{argmax, expectile_loss, one_hot};
use dicorl::replay::{sample_blend, ReplayBuffer, DEFAULT_BLEND_RATIO, DEFAULT_CAPACITY};
use dicorl::seed::{derive, offset};

fn js_err(e: dicorl::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Mean expectile loss of `samples` around each of `n` evenly spaced
/// locations in `[lo, hi]`.
pub fn expectile_loss_curve(samples: &[f64], tau: f64, lo: f64, hi: f64, n: usize) -> dicorl::Result<Vec<f64>> {
    let k = samples.len().max(1) as f64;
    (0..n)
        .map(|i| {
            let m = lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64;
            let mut sum = 0.0;
            for &x in samples {
                sum += expectile_loss(x - m, tau)?;
            }
            Ok(sum / k)
        })
        .collect()
}

/// The `tau`-expectile of `samples`: the root of
/// `tau E[(X - m)+] = (1 - tau) E[(m - X)+]`, found by bisection.
pub fn expectile_of(samples: &[f64], tau: f64) -> f64 {
    let lo0 = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi0 = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if samples.is_empty() || lo0 == hi0 {
        return if samples.is_empty() { 0.0 } else { lo0 };
    }
    let gap = |m: f64| {
        let mut up = 0.0;
        let mut down = 0.0;
        for &x in samples {
            if x > m {
                up += x - m;
            } else {
                down += m - x;
            }
        }
        tau * up - (1.0 - tau) * down
    };
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Mean over chain probe states of `min_j V_j(s)` at initialization, averaged
/// over `seeds` agent seeds, for each ensemble size.
pub fn pessimism_curve(sizes: &[usize], hidden: &[usize], seeds: u32) -> dicorl::Result<Vec<f64>> {
    let mdp = make_default(EnvKind::ChainGrid, 0);
    let probes = default_probes(&mdp);
    let mut out = vec![0.0; sizes.len()];
    for seed in 0..seeds as u64 {
        for (k, &m) in sizes.iter().enumerate() {
            let cfg = AgentConfig {
                ensemble_size: m,
                hidden: hidden.to_vec(),
                ..AgentConfig::default()
            };
            let agent = AgentState::new(&mdp, &cfg, seed)?;
            let mut sum = 0.0;
            for p in &probes {
                sum += agent.min_v(&p.state)?;
            }
            out[k] += sum / probes.len() as f64 / seeds.max(1) as f64;
        }
    }
    Ok(out)
}

#[wasm_bindgen(js_name = expectileLossCurve)]
pub fn expectile_loss_curve_js(samples: Vec<f64>, tau: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsValue> {
    expectile_loss_curve(&samples, tau, lo, hi, n).map_err(js_err)
}

#[wasm_bindgen(js_name = expectileOf)]
pub fn expectile_of_js(samples: Vec<f64>, tau: f64) -> f64 {
    expectile_of(&samples, tau)
}

#[wasm_bindgen(js_name = pessimismCurve)]
pub fn pessimism_curve_js(sizes: Vec<usize>, hidden: Vec<usize>, seeds: u32) -> Result<Vec<f64>, JsValue> {
    pessimism_curve(&sizes, &hidden, seeds).map_err(js_err)
}

/// A Medium1 then Random1 chain run trained a few steps at a time.
#[wasm_bindgen]
pub struct ChainDemo {
    mdp: Mdp,
    algorithm: RunAlgorithm,
    datasets: Vec<Vec<Transition>>,
    agent: AgentState,
    buffer: ReplayBuffer,
    empty: ReplayBuffer,
    rng: ChaCha8Rng,
    seed: u64,
    steps_per_dataset: u32,
    stage: usize,
    stage_steps: u32,
}

#[wasm_bindgen]
impl ChainDemo {
    /// `algorithm` is one of `cql`, `cql+er`, `iql`, `iql+er`, `eiql`, `ereiql`.
    #[wasm_bindgen(constructor)]
    pub fn new(
        algorithm: &str,
        ensemble: usize,
        tau: f64,
        hidden: usize,
        steps_per_dataset: u32,
        seed: u64,
    ) -> Result<ChainDemo, JsValue> {
        let algorithm = RunAlgorithm::parse(algorithm)
            .ok_or_else(|| JsValue::from_str(&format!("unknown algorithm `{algorithm}`")))?;
        let mdp = make_default(EnvKind::ChainGrid, seed);
        let datasets = ["Medium1", "Random1"]
            .iter()
            .map(|l| {
                let spec = DatasetSpec::from_label(EnvKind::ChainGrid, l, seed)?;
                generate_dataset(&mdp, &spec)
            })
            .collect::<dicorl::Result<Vec<_>>>()
            .map_err(js_err)?;
        let mut cfg = AgentConfig {
            ensemble_size: ensemble,
            hidden: vec![hidden, hidden],
            ..AgentConfig::default()
        };
        cfg.hyper.tau = tau;
        let agent = AgentState::new(&mdp, &cfg, seed).map_err(js_err)?;
        Ok(ChainDemo {
            mdp,
            algorithm,
            datasets,
            agent,
            buffer: ReplayBuffer::new(DEFAULT_CAPACITY).map_err(js_err)?,
            empty: ReplayBuffer::new(1).map_err(js_err)?,
            rng: ChaCha8Rng::seed_from_u64(derive(seed, offset::BATCH, 0)),
            seed,
            steps_per_dataset,
            stage: 0,
            stage_steps: 0,
        })
    }

    /// Trains up to `n` gradient steps; returns `false` once both datasets
    /// are done.
    pub fn advance(&mut self, n: u32) -> Result<bool, JsValue> {
        for _ in 0..n {
            if self.stage >= self.datasets.len() {
                return Ok(false);
            }
            let source = if self.algorithm.uses_replay() {
                &self.buffer
            } else {
                &self.empty
            };
            let batch = sample_blend(
                source,
                &self.datasets[self.stage],
                self.agent.hyper.batch_size,
                DEFAULT_BLEND_RATIO,
                &mut self.rng,
            )
            .map_err(js_err)?;
            self.agent
                .train_step(&batch, self.algorithm.base(), &mut self.rng)
                .map_err(js_err)?;
            self.stage_steps += 1;
            if self.stage_steps == self.steps_per_dataset {
                self.finish_stage()?;
            }
        }
        Ok(self.stage < self.datasets.len())
    }

    fn finish_stage(&mut self) -> Result<(), JsValue> {
        if self.algorithm.uses_replay() {
            for t in trajectories(&self.datasets[self.stage]) {
                self.buffer.offer(&self.agent, t).map_err(js_err)?;
            }
        }
        self.stage += 1;
        self.stage_steps = 0;
        self.rng = ChaCha8Rng::seed_from_u64(derive(self.seed, offset::BATCH, self.stage as u64));
        if self.stage < self.datasets.len() && self.algorithm.clones_policy() {
            self.agent.clone_policy();
        }
        Ok(())
    }

    /// Zero-based index of the dataset being trained (2 when finished).
    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn steps(&self) -> f64 {
        self.agent.steps as f64
    }

    /// Critic values of left, stay and right at the start state.
    #[wasm_bindgen(js_name = startQ)]
    pub fn start_q(&self) -> Result<Vec<f64>, JsValue> {
        let s = self.mdp.chain_state(0);
        (0..3)
            .map(|a| self.agent.q_value(&s, &one_hot(a, 3)).map_err(js_err))
            .collect()
    }

    /// Whether the critic's greedy action at the start state is `right`.
    #[wasm_bindgen(js_name = greedyIsRight)]
    pub fn greedy_is_right(&self) -> Result<bool, JsValue> {
        Ok(argmax(&self.start_q()?) == CHAIN_RIGHT)
    }

    /// Mean return of the policy's mode over a few fixed-seed episodes.
    #[wasm_bindgen(js_name = evalReturn)]
    pub fn eval_return(&self, episodes: usize) -> Result<f64, JsValue> {
        evaluate_policy(
            &self.mdp,
            &self.agent.greedy_policy(),
            episodes,
            derive(self.seed, offset::EVAL, 0),
        )
        .map(|o| o.mean_return)
        .map_err(js_err)
    }
}
