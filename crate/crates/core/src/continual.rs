//! Sequential training over a list of datasets, evaluation bookkeeping and
//! the continual-learning metrics.
//!
//! The evaluation target is a single task, so `a[i][j]` is the return of the
//! agent after finishing dataset `i`, for every `j <= i`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algo::{read_agent_checkpoint, write_agent_checkpoint, AgentConfig, AgentState, Algorithm};
use crate::data::{trajectories, Dataset, Quality, SequenceSpec};
use crate::env::{evaluate_policy, ActionSpace, EnvKind, Mdp, CHAIN_RIGHT};
use crate::error::{Error, Result};
use crate::nn::loss::{argmax, one_hot, PolicyHead};
use crate::replay::{self, ReplayBuffer, DEFAULT_BLEND_RATIO, DEFAULT_CAPACITY};
use crate::seed::{derive, offset};

pub const DEFAULT_EVAL_EPISODES: usize = 20;
pub const PROBE_CANDIDATES: usize = 64;
/// Continuous greedy actions within this Euclidean distance of the
/// reference action count as the same action.
pub const ACTION_MATCH_RADIUS: f64 = 0.1;

/// Training recipe of a run: base update rule plus replay and cloning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RunAlgorithm {
    #[serde(rename = "cql")]
    Cql,
    #[serde(rename = "cql+er")]
    CqlEr,
    #[serde(rename = "iql")]
    Iql,
    #[serde(rename = "iql+er")]
    IqlEr,
    #[serde(rename = "eiql")]
    Eiql,
    #[serde(rename = "ereiql")]
    Ereiql,
}

impl RunAlgorithm {
    pub const ALL: [RunAlgorithm; 6] = [
        RunAlgorithm::Cql,
        RunAlgorithm::CqlEr,
        RunAlgorithm::Iql,
        RunAlgorithm::IqlEr,
        RunAlgorithm::Eiql,
        RunAlgorithm::Ereiql,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunAlgorithm::Cql => "cql",
            RunAlgorithm::CqlEr => "cql+er",
            RunAlgorithm::Iql => "iql",
            RunAlgorithm::IqlEr => "iql+er",
            RunAlgorithm::Eiql => "eiql",
            RunAlgorithm::Ereiql => "ereiql",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }

    pub fn base(self) -> Algorithm {
        match self {
            RunAlgorithm::Cql | RunAlgorithm::CqlEr => Algorithm::Cql,
            RunAlgorithm::Iql | RunAlgorithm::IqlEr => Algorithm::Iql,
            RunAlgorithm::Eiql | RunAlgorithm::Ereiql => Algorithm::Eiql,
        }
    }

    pub fn uses_replay(self) -> bool {
        matches!(self, RunAlgorithm::CqlEr | RunAlgorithm::IqlEr | RunAlgorithm::Ereiql)
    }

    /// Whether the policy is cloned at each dataset boundary and the cloned
    /// action enters the policy loss.
    pub fn clones_policy(self) -> bool {
        self.base() == Algorithm::Eiql
    }

    /// Expectile threshold used when none is configured: 0.99 for the
    /// ensemble variants, 0.8 otherwise.
    pub fn default_tau(self) -> f64 {
        match self.base() {
            Algorithm::Eiql => 0.99,
            _ => 0.8,
        }
    }

    /// Number of value nets used when none is configured: 30 for the
    /// ensemble variants, 1 otherwise.
    pub fn default_ensemble(self) -> usize {
        match self.base() {
            Algorithm::Eiql => 30,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub algorithm: RunAlgorithm,
    pub agent: AgentConfig,
    pub buffer_capacity: usize,
    pub blend_ratio: f64,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl RunSettings {
    pub fn new(algorithm: RunAlgorithm, agent: AgentConfig, seed: u64) -> Self {
        RunSettings {
            algorithm,
            agent,
            buffer_capacity: DEFAULT_CAPACITY,
            blend_ratio: DEFAULT_BLEND_RATIO,
            eval_episodes: DEFAULT_EVAL_EPISODES,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    /// Zero-based index of the dataset being trained when the point was taken.
    pub dataset: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalMatrix {
    /// Row `i` holds `i + 1` entries.
    pub a: Vec<Vec<f64>>,
    pub eval_curve: Vec<CurvePoint>,
}

impl EvalMatrix {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// Appends the row for the dataset just finished; every entry is `value`.
    pub fn push_constant_row(&mut self, value: f64) {
        let n = self.a.len() + 1;
        self.a.push(vec![value; n]);
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.is_empty() {
            return Err(Error::Parameter("evaluation matrix is empty".into()));
        }
        for (i, row) in self.a.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::Shape {
                    expected: i + 1,
                    got: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    index: i * (i + 1) / 2 + j,
                    what: "evaluation matrix entry".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per: f64,
    pub bwt: f64,
    pub lst: f64,
    /// Set for one-dataset sequences, where backward transfer is undefined
    /// and reported as 0.
    pub degenerate: bool,
}

pub fn compute_metrics(m: &EvalMatrix) -> Result<Metrics> {
    m.validate()?;
    let n = m.n();
    let last = &m.a[n - 1];
    let mut sum = 0.0;
    for v in last {
        sum += *v;
    }
    let per = sum / n as f64;
    let lst = last[n - 1];
    if n == 1 {
        return Ok(Metrics {
            per,
            bwt: 0.0,
            lst,
            degenerate: true,
        });
    }
    let mut drop = 0.0;
    for k in 0..n - 1 {
        drop += m.a[k][k] - last[k];
    }
    Ok(Metrics {
        per,
        bwt: drop / (n - 1) as f64,
        lst,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub state: Vec<f64>,
    pub reference_action: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeValue {
    pub q_ref: f64,
    /// Ensemble minimum value; absent for algorithms without value nets.
    pub min_v: Option<f64>,
    pub greedy_action: Vec<f64>,
    pub matches_reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: u64,
    pub dataset: usize,
    pub values: Vec<ProbeValue>,
}

/// Probe set for an environment. Entry 0 is the designated `s*`: the chain
/// start state with `right`, or the centre of the point-mass start region
/// with the controller's action.
pub fn default_probes(mdp: &Mdp) -> Vec<Probe> {
    match mdp.kind() {
        EnvKind::ChainGrid => (0..mdp.goal_index())
            .map(|i| Probe {
                state: mdp.chain_state(i),
                reference_action: one_hot(CHAIN_RIGHT, 3),
            })
            .collect(),
        EnvKind::PointMass => [[-0.75, -0.75], [-0.25, -0.25], [0.3, 0.3], [-0.5, 0.5], [0.5, -0.5]]
            .iter()
            .map(|s| Probe {
                state: s.to_vec(),
                reference_action: mdp.expert_action(s),
            })
            .collect(),
    }
}

/// Fixed candidate actions for greedy search in continuous spaces.
pub fn probe_candidates(mdp: &Mdp) -> Vec<Vec<f64>> {
    match mdp.action_space() {
        ActionSpace::Discrete(_) => Vec::new(),
        ActionSpace::Box { low, high } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive(0, offset::PROBE, 0));
            (0..PROBE_CANDIDATES)
                .map(|_| low.iter().zip(high).map(|(&l, &h)| rng.random_range(l..=h)).collect())
                .collect()
        }
    }
}

pub fn same_action(head: PolicyHead, a: &[f64], b: &[f64]) -> bool {
    match head {
        PolicyHead::Categorical { .. } => argmax(a) == argmax(b),
        PolicyHead::Gaussian { .. } => {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            d2.sqrt() <= ACTION_MATCH_RADIUS
        }
    }
}

/// Current critic value at each probe, the ensemble minimum value and the
/// critic's greedy action.
pub fn forgetting_probe(
    agent: &AgentState,
    algorithm: Algorithm,
    probes: &[Probe],
    candidates: &[Vec<f64>],
    step: u64,
    dataset: usize,
) -> Result<ProbeRecord> {
    let values = probes
        .iter()
        .map(|p| {
            let (greedy_action, _) = agent.greedy_q_action(&p.state, candidates)?;
            Ok(ProbeValue {
                q_ref: agent.q_value(&p.state, &p.reference_action)?,
                min_v: if algorithm.uses_value_ensemble() {
                    Some(agent.min_v(&p.state)?)
                } else {
                    None
                },
                matches_reference: same_action(agent.head, &greedy_action, &p.reference_action),
                greedy_action,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeRecord { step, dataset, values })
}

/// Everything besides the metrics that a run records.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunProgress {
    pub completed: usize,
    pub matrix: EvalMatrix,
    pub probes: Vec<ProbeRecord>,
    /// Datasets (zero-based) after a Random to Medium switch at whose end the
    /// greedy action at `s*` had not become the reference action.
    pub active_rejections: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: Metrics,
    pub probes: Vec<ProbeRecord>,
    pub active_rejections: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub agent: AgentState,
    pub buffer: ReplayBuffer,
    pub matrix: EvalMatrix,
    pub report: MetricsReport,
}

fn check_inputs(mdp: &Mdp, seq: &SequenceSpec, datasets: &[Dataset], settings: &RunSettings) -> Result<()> {
    if datasets.len() != seq.datasets.len() {
        return Err(Error::Config(format!(
            "sequence lists {} datasets but {} were supplied",
            seq.datasets.len(),
            datasets.len()
        )));
    }
    for (spec, ds) in seq.datasets.iter().zip(datasets) {
        let h = &ds.header;
        if h.label != spec.label {
            return Err(Error::Config(format!(
                "dataset `{}` supplied where `{}` was expected",
                h.label, spec.label
            )));
        }
        if h.env_kind != mdp.kind() || h.state_dim != mdp.state_dim() || h.action_dim != mdp.action_dim() {
            return Err(Error::Config(format!(
                "dataset `{}` was recorded on {} ({}x{}) but the run uses {} ({}x{})",
                h.label,
                h.env_kind.as_str(),
                h.state_dim,
                h.action_dim,
                mdp.kind().as_str(),
                mdp.state_dim(),
                mdp.action_dim()
            )));
        }
        if ds.transitions.is_empty() {
            return Err(Error::Config(format!("dataset `{}` has no transitions", h.label)));
        }
    }
    if seq.epochs_per_dataset == 0 {
        return Err(Error::Config("epochs_per_dataset must be at least 1".into()));
    }
    if settings.eval_episodes == 0 {
        return Err(Error::Config("eval_episodes must be at least 1".into()));
    }
    if settings.buffer_capacity == 0 {
        return Err(Error::Config("buffer capacity must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&settings.blend_ratio) {
        return Err(Error::Config("blend_ratio must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Trains on every dataset of `seq` in order. With `out` set, the run
/// directory is refreshed after each dataset so that an abort leaves a
/// consistent partial record.
pub fn run_sequence(
    mdp: &Mdp,
    seq: &SequenceSpec,
    datasets: &[Dataset],
    settings: &RunSettings,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    check_inputs(mdp, seq, datasets, settings)?;
    let agent = AgentState::new(mdp, &settings.agent, settings.seed)?;
    let buffer = ReplayBuffer::new(settings.buffer_capacity)?;
    if let Some(dir) = out {
        RunDir::new(dir).init(seq, settings)?;
    }
    continue_run(mdp, seq, datasets, settings, out, agent, buffer, RunProgress::default())
}

/// Continues a run from the checkpoint written after dataset `completed`.
pub fn resume_sequence(
    mdp: &Mdp,
    seq: &SequenceSpec,
    datasets: &[Dataset],
    settings: &RunSettings,
    dir: &Path,
    completed: usize,
) -> Result<RunOutcome> {
    check_inputs(mdp, seq, datasets, settings)?;
    let rd = RunDir::new(dir);
    let (agent, buffer, progress) = rd.load_checkpoint(completed, settings.buffer_capacity)?;
    continue_run(mdp, seq, datasets, settings, Some(dir), agent, buffer, progress)
}

#[allow(clippy::too_many_arguments)]
fn continue_run(
    mdp: &Mdp,
    seq: &SequenceSpec,
    datasets: &[Dataset],
    settings: &RunSettings,
    out: Option<&Path>,
    mut agent: AgentState,
    mut buffer: ReplayBuffer,
    mut progress: RunProgress,
) -> Result<RunOutcome> {
    let algo = settings.algorithm;
    let base = algo.base();
    let probes = default_probes(mdp);
    let candidates = probe_candidates(mdp);
    let eval_seed = derive(settings.seed, offset::EVAL, 0);
    let batch_size = agent.hyper.batch_size;
    let empty = ReplayBuffer::new(1)?;
    let rd = out.map(RunDir::new);

    for n in progress.completed..datasets.len() {
        let data = &datasets[n].transitions;
        if n > 0 && algo.clones_policy() {
            agent.clone_policy();
        }
        let source = if algo.uses_replay() { &buffer } else { &empty };
        let mut rng = ChaCha8Rng::seed_from_u64(derive(settings.seed, offset::BATCH, n as u64));
        let steps_per_epoch = data.len().div_ceil(batch_size);
        let mut last_eval = None;
        for epoch in 1..=seq.epochs_per_dataset {
            last_eval = None;
            for _ in 0..steps_per_epoch {
                let batch = replay::sample_blend(source, data, batch_size, settings.blend_ratio, &mut rng)?;
                if let Err(e) = agent.train_step(&batch, base, &mut rng) {
                    if let Some(rd) = &rd {
                        rd.write_outputs(seq, settings, &progress, Some((n, &e)))?;
                    }
                    return Err(e);
                }
            }
            if seq.eval_interval > 0 && epoch % seq.eval_interval == 0 {
                let value =
                    evaluate_policy(mdp, &agent.greedy_policy(), settings.eval_episodes, eval_seed)?.mean_return;
                progress.matrix.eval_curve.push(CurvePoint {
                    step: agent.steps,
                    dataset: n,
                    value,
                });
                progress
                    .probes
                    .push(forgetting_probe(&agent, base, &probes, &candidates, agent.steps, n)?);
                last_eval = Some(value);
            }
        }
        let value = match last_eval {
            Some(v) => v,
            None => {
                let v = evaluate_policy(mdp, &agent.greedy_policy(), settings.eval_episodes, eval_seed)?.mean_return;
                progress.matrix.eval_curve.push(CurvePoint {
                    step: agent.steps,
                    dataset: n,
                    value: v,
                });
                progress
                    .probes
                    .push(forgetting_probe(&agent, base, &probes, &candidates, agent.steps, n)?);
                v
            }
        };
        progress.matrix.push_constant_row(value);

        if n > 0 {
            let prev = seq.datasets[n - 1].quality;
            let cur = seq.datasets[n].quality;
            let at_star = &progress.probes.last().expect("probe recorded").values[0];
            if prev == Quality::Random && cur == Quality::Medium && !at_star.matches_reference {
                progress.active_rejections.push(n);
            }
        }
        if algo.uses_replay() {
            for traj in trajectories(data) {
                buffer.offer(&agent, traj)?;
            }
        }
        progress.completed = n + 1;
        if let Some(rd) = &rd {
            rd.write_checkpoint(mdp, &agent, &buffer, &progress)?;
            rd.write_outputs(seq, settings, &progress, None)?;
        }
    }

    let metrics = compute_metrics(&progress.matrix)?;
    Ok(RunOutcome {
        agent,
        buffer,
        report: MetricsReport {
            metrics,
            probes: progress.probes,
            active_rejections: progress.active_rejections,
        },
        matrix: progress.matrix,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsFile {
    pub per: f64,
    pub bwt: f64,
    pub lst: f64,
    pub degenerate: bool,
    pub algorithm: RunAlgorithm,
    pub datasets: Vec<String>,
    pub active_rejections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Running,
    Complete,
    Aborted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStatus {
    pub state: RunState,
    pub completed: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Files of a run directory.
pub struct RunDir {
    root: PathBuf,
}

pub const SETTINGS_FILE: &str = "settings.json";
pub const STATUS_FILE: &str = "status.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const MATRIX_FILE: &str = "eval_matrix.csv";
pub const CURVE_FILE: &str = "eval_curve.csv";
pub const PROBES_FILE: &str = "probes.csv";

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        RunDir {
            root: root.to_path_buf(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn checkpoint_dir(&self, completed: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("after_{completed:02}"))
    }

    fn init(&self, seq: &SequenceSpec, settings: &RunSettings) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let snapshot = serde_json::json!({ "sequence": seq, "settings": settings });
        write_file(&self.path(SETTINGS_FILE), &serde_json::to_string_pretty(&snapshot)?)?;
        self.write_outputs(seq, settings, &RunProgress::default(), None)
    }

    fn write_checkpoint(
        &self,
        mdp: &Mdp,
        agent: &AgentState,
        buffer: &ReplayBuffer,
        progress: &RunProgress,
    ) -> Result<()> {
        let dir = self.checkpoint_dir(progress.completed);
        write_agent_checkpoint(&dir.join("agent"), agent)?;
        replay::save_buffer(
            &dir.join("buffer.dset"),
            buffer,
            mdp.kind(),
            mdp.state_dim(),
            mdp.action_dim(),
        )?;
        write_file(&dir.join("progress.json"), &serde_json::to_string(progress)?)
    }

    pub fn load_checkpoint(
        &self,
        completed: usize,
        capacity: usize,
    ) -> Result<(AgentState, ReplayBuffer, RunProgress)> {
        let dir = self.checkpoint_dir(completed);
        let agent = read_agent_checkpoint(&dir.join("agent"))?;
        let buffer = replay::load_buffer(&dir.join("buffer.dset"), capacity)?;
        let path = dir.join("progress.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let progress: RunProgress = serde_json::from_str(&text)?;
        if progress.completed != completed {
            return Err(Error::Config(format!(
                "checkpoint {} records {} completed datasets",
                dir.display(),
                progress.completed
            )));
        }
        Ok((agent, buffer, progress))
    }

    fn write_outputs(
        &self,
        seq: &SequenceSpec,
        settings: &RunSettings,
        progress: &RunProgress,
        abort: Option<(usize, &Error)>,
    ) -> Result<()> {
        let labels: Vec<String> = seq.datasets.iter().map(|d| d.label.clone()).collect();
        write_file(&self.path(MATRIX_FILE), &matrix_csv(&progress.matrix, &labels))?;
        write_file(&self.path(CURVE_FILE), &curve_csv(&progress.matrix, &labels))?;
        write_file(&self.path(PROBES_FILE), &probes_csv(&progress.probes))?;
        if progress.matrix.n() > 0 {
            let m = compute_metrics(&progress.matrix)?;
            let file = MetricsFile {
                per: m.per,
                bwt: m.bwt,
                lst: m.lst,
                degenerate: m.degenerate,
                algorithm: settings.algorithm,
                datasets: labels[..progress.matrix.n()].to_vec(),
                active_rejections: progress.active_rejections.iter().map(|&i| labels[i].clone()).collect(),
            };
            write_file(&self.path(METRICS_FILE), &serde_json::to_string_pretty(&file)?)?;
        }
        let status = RunStatus {
            state: match abort {
                Some(_) => RunState::Aborted,
                None if progress.completed == labels.len() => RunState::Complete,
                None => RunState::Running,
            },
            completed: progress.completed,
            total: labels.len(),
            error: abort.map(|(n, e)| format!("dataset {}: {e}", labels[n])),
        };
        write_file(&self.path(STATUS_FILE), &serde_json::to_string_pretty(&status)?)
    }
}

pub fn matrix_csv(m: &EvalMatrix, labels: &[String]) -> String {
    let mut s = String::from("after,label");
    for l in labels {
        write!(s, ",{l}").unwrap();
    }
    s.push('\n');
    for (i, row) in m.a.iter().enumerate() {
        write!(s, "{},{}", i + 1, labels[i]).unwrap();
        for j in 0..labels.len() {
            match row.get(j) {
                Some(v) => write!(s, ",{v}").unwrap(),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

pub fn curve_csv(m: &EvalMatrix, labels: &[String]) -> String {
    let mut s = String::from("step,dataset,label,return\n");
    for p in &m.eval_curve {
        writeln!(s, "{},{},{},{}", p.step, p.dataset + 1, labels[p.dataset], p.value).unwrap();
    }
    s
}

pub fn probes_csv(records: &[ProbeRecord]) -> String {
    let mut s = String::from("step,dataset,probe,q_ref,min_v,greedy_action,matches_reference\n");
    for r in records {
        for (k, v) in r.values.iter().enumerate() {
            let greedy: Vec<String> = v.greedy_action.iter().map(|x| x.to_string()).collect();
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.step,
                r.dataset + 1,
                k,
                v.q_ref,
                v.min_v.map(|x| x.to_string()).unwrap_or_default(),
                greedy.join(" "),
                v.matches_reference as u8
            )
            .unwrap();
        }
    }
    s
}
