//! Run configuration: a TOML file, command-line overrides and defaults,
//! resolved in that order of precedence (flags > file > defaults).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dicorl::algo::{AgentConfig, HyperParams};
use dicorl::continual::{RunAlgorithm, RunSettings, DEFAULT_EVAL_EPISODES};
use dicorl::data::{default_trajectories, preset_labels, SequenceSpec};
use dicorl::env::EnvKind;
use dicorl::nn::{Activation, OptimMethod};
use dicorl::replay::{DEFAULT_BLEND_RATIO, DEFAULT_CAPACITY};

use crate::CliError;

pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_PRESET: &str = "paper9";

/// Hyperparameter overrides accepted under `[hyper]`. The expectile
/// threshold lives at the top level as `tau`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverrides {
    pub alpha_awr: Option<f64>,
    pub alpha_cql: Option<f64>,
    pub gamma: Option<f64>,
    pub batch_size: Option<usize>,
    pub target_update_rate: Option<f64>,
    pub adv_clip: Option<f64>,
    pub learning_rate: Option<f64>,
    pub cql_samples: Option<usize>,
    pub cql_entropy: Option<f64>,
}

/// Every key a config file may contain. All keys are optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub env: Option<String>,
    pub algorithm: Option<String>,
    pub preset: Option<String>,
    pub sequence: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub buffer: Option<usize>,
    pub ensemble: Option<usize>,
    pub tau: Option<f64>,
    pub epochs: Option<usize>,
    pub eval_interval: Option<usize>,
    pub eval_episodes: Option<usize>,
    pub blend_ratio: Option<f64>,
    pub trajectories: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<String>,
    pub optimizer: Option<String>,
    pub hyper: Option<HyperOverrides>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Values set in `over` replace those in `self`.
    pub fn overlay(mut self, over: FileConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f; } )* };
        }
        if over.preset.is_some() || over.sequence.is_some() {
            self.preset = over.preset;
            self.sequence = over.sequence;
        }
        take!(
            env,
            algorithm,
            seed,
            out,
            data,
            buffer,
            ensemble,
            tau,
            epochs,
            eval_interval,
            eval_episodes,
            blend_ratio,
            trajectories,
            hidden,
            activation,
            optimizer
        );
        if let Some(h) = over.hyper {
            let mut base = self.hyper.take().unwrap_or_default();
            macro_rules! take_h {
                ($($f:ident),*) => { $( if h.$f.is_some() { base.$f = h.$f; } )* };
            }
            take_h!(
                alpha_awr,
                alpha_cql,
                gamma,
                batch_size,
                target_update_rate,
                adv_clip,
                learning_rate,
                cql_samples,
                cql_entropy
            );
            self.hyper = Some(base);
        }
        self
    }
}

/// A fully resolved run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub algorithm: RunAlgorithm,
    pub labels: Vec<String>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub buffer: usize,
    pub blend_ratio: f64,
    pub epochs: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub trajectories: usize,
    pub agent: AgentConfig,
}

pub fn parse_env(s: &str) -> Result<EnvKind, CliError> {
    EnvKind::parse(s).ok_or_else(|| CliError::Usage(format!("unknown env `{s}` (expected chain or point_mass)")))
}

pub fn parse_algorithm(s: &str) -> Result<RunAlgorithm, CliError> {
    RunAlgorithm::parse(s).ok_or_else(|| {
        let names: Vec<&str> = RunAlgorithm::ALL.iter().map(|a| a.as_str()).collect();
        CliError::Usage(format!(
            "unknown algorithm `{s}` (expected one of {})",
            names.join(", ")
        ))
    })
}

pub fn resolve_labels(preset: Option<&str>, sequence: Option<&[String]>) -> Result<Vec<String>, CliError> {
    match (preset, sequence) {
        (Some(_), Some(_)) => Err(CliError::Usage(
            "give either a preset or an explicit sequence, not both".into(),
        )),
        (None, Some(seq)) => Ok(seq.to_vec()),
        (p, None) => {
            let name = p.unwrap_or(DEFAULT_PRESET);
            preset_labels(name).ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`")))
        }
    }
}

impl RunConfig {
    pub fn resolve(file: &FileConfig) -> Result<Self, CliError> {
        let env = parse_env(file.env.as_deref().unwrap_or("chain"))?;
        let algorithm = parse_algorithm(file.algorithm.as_deref().unwrap_or("ereiql"))?;
        let labels = resolve_labels(file.preset.as_deref(), file.sequence.as_deref())?;
        let mut hyper = HyperParams {
            tau: file.tau.unwrap_or(algorithm.default_tau()),
            ..HyperParams::default()
        };
        if let Some(h) = &file.hyper {
            macro_rules! set {
                ($($f:ident),*) => { $( if let Some(v) = h.$f { hyper.$f = v; } )* };
            }
            set!(
                alpha_awr,
                alpha_cql,
                gamma,
                batch_size,
                target_update_rate,
                adv_clip,
                learning_rate,
                cql_samples,
                cql_entropy
            );
        }
        hyper.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let defaults = AgentConfig::default();
        let activation = match file.activation.as_deref() {
            None => defaults.activation,
            Some(s) => Activation::parse(s).ok_or_else(|| CliError::Usage(format!("unknown activation `{s}`")))?,
        };
        let optimizer = match file.optimizer.as_deref() {
            None | Some("adam") => OptimMethod::Adam,
            Some("sgd") => OptimMethod::Sgd,
            Some(s) => return Err(CliError::Usage(format!("unknown optimizer `{s}`"))),
        };
        let cfg = RunConfig {
            env,
            algorithm,
            labels,
            seed: file.seed.unwrap_or(0),
            out: file.out.clone(),
            data: file.data.clone(),
            buffer: file.buffer.unwrap_or(DEFAULT_CAPACITY),
            blend_ratio: file.blend_ratio.unwrap_or(DEFAULT_BLEND_RATIO),
            epochs: file.epochs.unwrap_or(DEFAULT_EPOCHS),
            eval_interval: file.eval_interval.unwrap_or(1),
            eval_episodes: file.eval_episodes.unwrap_or(DEFAULT_EVAL_EPISODES),
            trajectories: file.trajectories.unwrap_or(default_trajectories(env)),
            agent: AgentConfig {
                ensemble_size: file.ensemble.unwrap_or(algorithm.default_ensemble()),
                hidden: file.hidden.clone().unwrap_or(defaults.hidden),
                activation,
                optimizer,
                hyper,
            },
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.buffer == 0 {
            return bad("buffer capacity must be at least 1");
        }
        if self.agent.ensemble_size == 0 {
            return bad("ensemble size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1");
        }
        if self.trajectories == 0 {
            return bad("trajectories must be at least 1");
        }
        if self.agent.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.blend_ratio) {
            return bad("blend_ratio must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn sequence(&self) -> Result<SequenceSpec, CliError> {
        let mut seq = SequenceSpec::from_labels(self.env, &self.labels, self.seed, self.epochs, self.eval_interval)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        for d in &mut seq.datasets {
            d.n_trajectories = self.trajectories;
        }
        Ok(seq)
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            algorithm: self.algorithm,
            agent: self.agent.clone(),
            buffer_capacity: self.buffer,
            blend_ratio: self.blend_ratio,
            eval_episodes: self.eval_episodes,
            seed: self.seed,
        }
    }

    /// Fully explicit file form; loading it reproduces this config.
    pub fn to_file(&self) -> FileConfig {
        let h = &self.agent.hyper;
        FileConfig {
            env: Some(self.env.as_str().to_string()),
            algorithm: Some(self.algorithm.as_str().to_string()),
            preset: None,
            sequence: Some(self.labels.clone()),
            seed: Some(self.seed),
            out: self.out.clone(),
            data: self.data.clone(),
            buffer: Some(self.buffer),
            ensemble: Some(self.agent.ensemble_size),
            tau: Some(h.tau),
            epochs: Some(self.epochs),
            eval_interval: Some(self.eval_interval),
            eval_episodes: Some(self.eval_episodes),
            blend_ratio: Some(self.blend_ratio),
            trajectories: Some(self.trajectories),
            hidden: Some(self.agent.hidden.clone()),
            activation: Some(self.agent.activation.as_str().to_string()),
            optimizer: Some(
                match self.agent.optimizer {
                    OptimMethod::Adam => "adam",
                    OptimMethod::Sgd => "sgd",
                }
                .to_string(),
            ),
            hyper: Some(HyperOverrides {
                alpha_awr: Some(h.alpha_awr),
                alpha_cql: Some(h.alpha_cql),
                gamma: Some(h.gamma),
                batch_size: Some(h.batch_size),
                target_update_rate: Some(h.target_update_rate),
                adv_clip: Some(h.adv_clip),
                learning_rate: Some(h.learning_rate),
                cql_samples: Some(h.cql_samples),
                cql_entropy: Some(h.cql_entropy),
            }),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("config serializes")
    }
}
