//! Behavior datasets: generation, the sequence description, and the
//! line-delimited file format.
//!
//! Line 1 of a dataset file is a JSON header. Every following line is one
//! transition, comma separated, in the order
//! `traj_id, t, s..., a..., r, s_next..., done` with reals printed to 17
//! significant digits and `done` as `0`/`1`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvKind, Mdp};
use crate::error::{Error, Result};
use crate::seed::{derive, offset};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Probability that the medium behavior policy follows the expert at a step.
pub const MEDIUM_EXPERT_PROB: f64 = 0.5;

pub const CHAIN_DEFAULT_TRAJECTORIES: usize = 300;
pub const POINT_DEFAULT_TRAJECTORIES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub r: f64,
    pub done: bool,
    pub traj_id: u64,
    pub t: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Random,
    Medium,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Random => "random",
            Quality::Medium => "medium",
        }
    }

    fn label_prefix(self) -> &'static str {
        match self {
            Quality::Random => "Random",
            Quality::Medium => "Medium",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub env: EnvKind,
    pub quality: Quality,
    pub n_trajectories: usize,
    pub seed: u64,
    pub label: String,
}

impl DatasetSpec {
    /// Builds the spec for a label such as `Random2` or `Medium1`. The
    /// dataset seed depends only on the root seed and the label, so the same
    /// label names the same data in every sequence.
    pub fn from_label(env: EnvKind, label: &str, root_seed: u64) -> Result<Self> {
        let (quality, index) = parse_label(label)?;
        let code = match quality {
            Quality::Random => 0,
            Quality::Medium => 1,
        };
        Ok(DatasetSpec {
            env,
            quality,
            n_trajectories: default_trajectories(env),
            seed: derive(root_seed, offset::DATASET, code * 1_000_000 + index),
            label: label.to_string(),
        })
    }
}

pub fn default_trajectories(env: EnvKind) -> usize {
    match env {
        EnvKind::ChainGrid => CHAIN_DEFAULT_TRAJECTORIES,
        EnvKind::PointMass => POINT_DEFAULT_TRAJECTORIES,
    }
}

/// Splits a label into quality and index: `Medium3` -> (medium, 3).
pub fn parse_label(label: &str) -> Result<(Quality, u64)> {
    for q in [Quality::Random, Quality::Medium] {
        if let Some(rest) = label.strip_prefix(q.label_prefix()) {
            if let Ok(i) = rest.parse::<u64>() {
                if i >= 1 {
                    return Ok((q, i));
                }
            }
        }
    }
    Err(Error::Config(format!(
        "dataset label `{label}` must look like Random<k> or Medium<k> with k >= 1"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub datasets: Vec<DatasetSpec>,
    pub epochs_per_dataset: usize,
    pub eval_interval: usize,
}

pub const PAPER9: [&str; 9] = [
    "Random1", "Random2", "Random3", "Medium1", "Medium2", "Medium3", "Random4", "Random5", "Random6",
];

/// Named dataset orders.
pub fn preset_labels(name: &str) -> Option<Vec<String>> {
    let labels: &[&str] = match name {
        "paper9" => &PAPER9,
        "medium-random" => &["Medium1", "Random1"],
        "random-medium" => &["Random1", "Medium1"],
        "single-medium" => &["Medium1"],
        _ => return None,
    };
    Some(labels.iter().map(|s| s.to_string()).collect())
}

impl SequenceSpec {
    pub fn from_labels(
        env: EnvKind,
        labels: &[String],
        root_seed: u64,
        epochs_per_dataset: usize,
        eval_interval: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("a sequence needs at least one dataset".into()));
        }
        let mut datasets = Vec::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Config(format!("dataset label `{l}` appears twice")));
            }
            datasets.push(DatasetSpec::from_label(env, l, root_seed)?);
        }
        Ok(SequenceSpec {
            datasets,
            epochs_per_dataset,
            eval_interval,
        })
    }
}

/// Rolls out the behavior policy for `spec.n_trajectories` episodes.
///
/// Random quality draws uniform actions. Medium quality follows the expert
/// with probability 0.5 at each step and acts uniformly otherwise.
/// Trajectory `i` uses its own seed stream, so output order is fixed.
pub fn generate_dataset(mdp: &Mdp, spec: &DatasetSpec) -> Result<Vec<Transition>> {
    if spec.env != mdp.kind() {
        return Err(Error::Config(format!(
            "dataset `{}` is for {}, environment is {}",
            spec.label,
            spec.env,
            mdp.kind()
        )));
    }
    if spec.n_trajectories == 0 {
        return Err(Error::Parameter("n_trajectories must be at least 1".into()));
    }
    let mut out = Vec::new();
    for i in 0..spec.n_trajectories {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(spec.seed, offset::TRAJECTORY, i as u64));
        let mut s = mdp.sample_initial(&mut rng);
        for t in 0..mdp.horizon() {
            let a = match spec.quality {
                Quality::Random => mdp.uniform_action(&mut rng),
                Quality::Medium => {
                    if rng.random::<f64>() < MEDIUM_EXPERT_PROB {
                        mdp.expert_action(&s)
                    } else {
                        mdp.uniform_action(&mut rng)
                    }
                }
            };
            let step = mdp.step(&s, &a);
            out.push(Transition {
                s: s.clone(),
                a,
                s_next: step.next_state.clone(),
                r: step.reward,
                done: step.done,
                traj_id: i as u64,
                t: t as u32,
            });
            if step.done {
                break;
            }
            s = step.next_state;
        }
    }
    Ok(out)
}

/// Contiguous runs of equal `traj_id`.
pub fn trajectories(transitions: &[Transition]) -> Vec<&[Transition]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=transitions.len() {
        if i == transitions.len() || transitions[i].traj_id != transitions[start].traj_id {
            if i > start {
                out.push(&transitions[start..i]);
            }
            start = i;
        }
    }
    out
}

/// Mean undiscounted return per trajectory.
pub fn mean_trajectory_return(transitions: &[Transition]) -> f64 {
    let trajs = trajectories(transitions);
    if trajs.is_empty() {
        return 0.0;
    }
    trajs.iter().map(|t| t.iter().map(|x| x.r).sum::<f64>()).sum::<f64>() / trajs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScore {
    pub traj_id: u64,
    pub score: f64,
    pub order: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub env_kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub quality: Option<Quality>,
    pub seed: u64,
    pub label: String,
    /// Present only in replay-buffer checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_scores: Option<Vec<TrajectoryScore>>,
}

impl DatasetHeader {
    pub fn for_spec(mdp: &Mdp, spec: &DatasetSpec) -> Self {
        DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            env_kind: spec.env,
            state_dim: mdp.state_dim(),
            action_dim: mdp.action_dim(),
            quality: Some(spec.quality),
            seed: spec.seed,
            label: spec.label.clone(),
            trajectory_scores: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub transitions: Vec<Transition>,
}

fn push_real(buf: &mut String, v: f64) {
    // 17 significant digits round-trip every f64 exactly.
    write!(buf, "{v:.16e}").unwrap();
}

pub fn encode_dataset(dataset: &Dataset) -> Result<String> {
    let mut buf = serde_json::to_string(&dataset.header)?;
    buf.push('\n');
    for tr in &dataset.transitions {
        write!(buf, "{},{}", tr.traj_id, tr.t).unwrap();
        for v in tr.s.iter().chain(&tr.a) {
            buf.push(',');
            push_real(&mut buf, *v);
        }
        buf.push(',');
        push_real(&mut buf, tr.r);
        for v in &tr.s_next {
            buf.push(',');
            push_real(&mut buf, *v);
        }
        buf.push_str(if tr.done { ",1\n" } else { ",0\n" });
    }
    Ok(buf)
}

pub fn decode_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let header: DatasetHeader = serde_json::from_str(first).map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Schema {
            line: 1,
            msg: format!("unsupported format version {}", header.format_version),
        });
    }
    let (sd, ad) = (header.state_dim, header.action_dim);
    let n_fields = 2 + sd + ad + 1 + sd + 1;
    let mut transitions = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_fields {
            return Err(Error::Schema {
                line: line_no,
                msg: format!("expected {n_fields} fields, found {}", fields.len()),
            });
        }
        let parse_err = |what: &str, raw: &str| Error::Parse {
            line: line_no,
            msg: format!("bad {what} `{raw}`"),
        };
        let traj_id = fields[0].parse::<u64>().map_err(|_| parse_err("traj_id", fields[0]))?;
        let t = fields[1].parse::<u32>().map_err(|_| parse_err("t", fields[1]))?;
        let reals = |range: std::ops::Range<usize>| -> Result<Vec<f64>> {
            fields[range]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| parse_err("number", f)))
                .collect()
        };
        let s = reals(2..2 + sd)?;
        let a = reals(2 + sd..2 + sd + ad)?;
        let r = reals(2 + sd + ad..3 + sd + ad)?[0];
        let s_next = reals(3 + sd + ad..3 + 2 * sd + ad)?;
        let done = match fields[n_fields - 1] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err("done flag", other)),
        };
        transitions.push(Transition {
            s,
            a,
            s_next,
            r,
            done,
            traj_id,
            t,
        });
    }
    Ok(Dataset { header, transitions })
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let text = encode_dataset(dataset)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&text)
}

/// Conventional file name for a dataset label.
pub fn dataset_file_name(label: &str) -> String {
    format!("{label}.dset")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_default, EnvKind};

    fn chain_spec(q: Quality, n: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            env: EnvKind::ChainGrid,
            quality: q,
            n_trajectories: n,
            seed,
            label: "Test1".into(),
        }
    }

    #[test]
    fn random_chain_rarely_reaches_goal() {
        let mdp = make_default(EnvKind::ChainGrid, 0);
        let d = generate_dataset(&mdp, &chain_spec(Quality::Random, 100, 5)).unwrap();
        assert!(mean_trajectory_return(&d) < 0.2);
    }

    #[test]
    fn medium_beats_random() {
        let mdp = make_default(EnvKind::ChainGrid, 0);
        let r = generate_dataset(&mdp, &chain_spec(Quality::Random, 100, 1)).unwrap();
        let m = generate_dataset(&mdp, &chain_spec(Quality::Medium, 100, 2)).unwrap();
        assert!(mean_trajectory_return(&m) > mean_trajectory_return(&r));
    }

    #[test]
    fn done_at_most_once_and_last() {
        let mdp = make_default(EnvKind::ChainGrid, 0);
        let d = generate_dataset(&mdp, &chain_spec(Quality::Medium, 50, 3)).unwrap();
        for traj in trajectories(&d) {
            let dones = traj.iter().filter(|t| t.done).count();
            assert!(dones <= 1);
            if dones == 1 {
                assert!(traj.last().unwrap().done);
            }
            for w in traj.windows(2) {
                assert!(w[0].t < w[1].t);
            }
        }
    }

    #[test]
    fn env_mismatch_rejected() {
        let mdp = make_default(EnvKind::PointMass, 0);
        assert!(matches!(
            generate_dataset(&mdp, &chain_spec(Quality::Random, 5, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let mdp = make_default(EnvKind::ChainGrid, 0);
        let ds = Dataset {
            header: DatasetHeader::for_spec(&mdp, &chain_spec(Quality::Random, 1, 0)),
            transitions: vec![],
        };
        let text = encode_dataset(&ds).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(decode_dataset(&text).unwrap(), ds);
    }

    #[test]
    fn single_transition_round_trip_on_disk() {
        let mdp = make_default(EnvKind::PointMass, 0);
        let spec = DatasetSpec {
            env: EnvKind::PointMass,
            quality: Quality::Medium,
            n_trajectories: 1,
            seed: 4,
            label: "Medium1".into(),
        };
        let mut transitions = generate_dataset(&mdp, &spec).unwrap();
        transitions.truncate(1);
        let ds = Dataset {
            header: DatasetHeader::for_spec(&mdp, &spec),
            transitions,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.dset");
        save_dataset(&path, &ds).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn corrupted_third_record_names_line_four() {
        let mdp = make_default(EnvKind::ChainGrid, 0);
        let spec = chain_spec(Quality::Random, 2, 9);
        let ds = Dataset {
            header: DatasetHeader::for_spec(&mdp, &spec),
            transitions: generate_dataset(&mdp, &spec).unwrap(),
        };
        let text = encode_dataset(&ds).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = lines[3].replacen(",0.0000000000000000e0", ",zero", 1);
        let err = decode_dataset(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3].push_str(",1");
        let err = decode_dataset(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, Error::Schema { line: 4, .. }), "{err}");
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let mdp = make_default(EnvKind::PointMass, 0);
        let spec = DatasetSpec::from_label(EnvKind::PointMass, "Random2", 17).unwrap();
        let a = Dataset {
            header: DatasetHeader::for_spec(&mdp, &spec),
            transitions: generate_dataset(&mdp, &spec).unwrap(),
        };
        let b = Dataset {
            header: DatasetHeader::for_spec(&mdp, &spec),
            transitions: generate_dataset(&mdp, &spec).unwrap(),
        };
        assert_eq!(encode_dataset(&a).unwrap(), encode_dataset(&b).unwrap());
    }

    #[test]
    fn labels_and_presets() {
        assert_eq!(parse_label("Medium3").unwrap(), (Quality::Medium, 3));
        assert!(parse_label("Expert1").is_err());
        assert!(parse_label("Random0").is_err());
        let seq = SequenceSpec::from_labels(EnvKind::ChainGrid, &preset_labels("paper9").unwrap(), 1, 50, 10).unwrap();
        assert_eq!(seq.datasets.len(), 9);
        assert_eq!(seq.datasets[3].quality, Quality::Medium);
        assert_ne!(seq.datasets[0].seed, seq.datasets[1].seed);
        let dup = vec!["Random1".to_string(), "Random1".to_string()];
        assert!(SequenceSpec::from_labels(EnvKind::ChainGrid, &dup, 1, 1, 1).is_err());
    }
}
