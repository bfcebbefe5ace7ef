//! `dicorl` command-line tool: dataset generation, sequence runs, ablation
//! grids and reports.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or configuration error,
//! 3 numeric abort.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod ablate;
pub mod config;
pub mod gen;
pub mod report;
pub mod run;

use config::{FileConfig, HyperOverrides, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(dicorl::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(dicorl::Error::Io { .. }) => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) if e.is_numeric() => write!(f, "numeric abort: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<dicorl::Error> for CliError {
    fn from(e: dicorl::Error) -> Self {
        CliError::Core(e)
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Core(dicorl::Error::io(path, e))
}

#[derive(Debug, Parser)]
#[command(name = "dicorl", version, about = "Continual offline RL over sequences of datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate dataset files for a sequence.
    Gen(gen::GenArgs),
    /// Train through a dataset sequence and write a run directory.
    Run(run::RunArgs),
    /// Run a grid of configurations over replicate seeds.
    Ablate(ablate::AblateArgs),
    /// Merge run directories into a curve CSV and a summary table.
    Report(report::ReportArgs),
}

/// Flags shared by the commands that build a run configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// chain or point_mass.
    #[arg(long)]
    pub env: Option<String>,
    /// cql, cql+er, iql, iql+er, eiql or ereiql.
    #[arg(long = "algo")]
    pub algorithm: Option<String>,
    /// paper9, medium-random, random-medium or single-medium.
    #[arg(long)]
    pub preset: Option<String>,
    /// Comma-separated dataset labels, e.g. Medium1,Random1.
    #[arg(long, value_delimiter = ',')]
    pub sequence: Option<Vec<String>>,
    /// Root seed for datasets, networks and sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory holding `<label>.dset` files. Without it, datasets are
    /// generated in memory from the seed.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Replay buffer capacity in trajectories.
    #[arg(long)]
    pub buffer: Option<usize>,
    /// Number of value networks (default 30 for eiql and ereiql, 1 otherwise).
    #[arg(long)]
    pub ensemble: Option<usize>,
    /// Expectile threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Epochs per dataset.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs between evaluations.
    #[arg(long)]
    pub eval_interval: Option<usize>,
    /// Episodes per evaluation.
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    /// Trajectories per generated dataset.
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Optimizer step size for every network.
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

impl CommonArgs {
    fn as_overrides(&self) -> FileConfig {
        let hyper = if self.batch_size.is_some() || self.learning_rate.is_some() {
            Some(HyperOverrides {
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                ..Default::default()
            })
        } else {
            None
        };
        FileConfig {
            env: self.env.clone(),
            algorithm: self.algorithm.clone(),
            preset: self.preset.clone(),
            sequence: self.sequence.clone(),
            seed: self.seed,
            out: self.out.clone(),
            data: self.data.clone(),
            buffer: self.buffer,
            ensemble: self.ensemble,
            tau: self.tau,
            epochs: self.epochs,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
            trajectories: self.trajectories,
            hyper,
            ..Default::default()
        }
    }

    /// Config file (if any) overlaid with the flags.
    pub fn merged(&self) -> Result<FileConfig, CliError> {
        if self.preset.is_some() && self.sequence.is_some() {
            return Err(CliError::Usage("--preset and --sequence are mutually exclusive".into()));
        }
        let base = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Ok(base.overlay(self.as_overrides()))
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        RunConfig::resolve(&self.merged()?)
    }
}

/// Parses `args` (including the program name) and executes the command.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen::cmd_gen(&a),
        Command::Run(a) => run::cmd_run(&a).map(|_| ()),
        Command::Ablate(a) => ablate::cmd_ablate(&a),
        Command::Report(a) => report::cmd_report(&a).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
