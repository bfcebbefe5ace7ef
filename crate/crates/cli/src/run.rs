use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use dicorl::continual::{
    resume_sequence, run_sequence, Metrics, RunStatus, CURVE_FILE, MATRIX_FILE, METRICS_FILE, PROBES_FILE,
    SETTINGS_FILE, STATUS_FILE,
};
use dicorl::data::{dataset_file_name, load_dataset, Dataset};
use dicorl::env::make_default;

use crate::config::RunConfig;
use crate::gen::build_datasets;
use crate::{io_error, CliError, CommonArgs};

pub const CONFIG_SNAPSHOT: &str = "config.toml";

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Replace the outputs of an earlier run in the same directory.
    #[arg(long)]
    pub force: bool,
    /// Continue an interrupted run from its latest checkpoint.
    #[arg(long, conflicts_with = "force")]
    pub resume: bool,
}

pub fn default_out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}_s{}", cfg.algorithm.as_str(), cfg.seed))
}

/// Datasets for the run: read from the data directory when one is given,
/// generated from the seed otherwise.
pub fn load_or_build(cfg: &RunConfig) -> Result<Vec<Dataset>, CliError> {
    let mdp = make_default(cfg.env, cfg.seed);
    let Some(dir) = &cfg.data else {
        return build_datasets(cfg, &mdp);
    };
    cfg.labels
        .iter()
        .map(|label| {
            let path = dir.join(dataset_file_name(label));
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "dataset `{label}` not found: {} is missing",
                    path.display()
                )));
            }
            load_dataset(&path).map_err(|e| CliError::Usage(format!("dataset `{label}` ({}): {e}", path.display())))
        })
        .collect()
}

const RUN_FILES: [&str; 7] = [
    SETTINGS_FILE,
    STATUS_FILE,
    METRICS_FILE,
    MATRIX_FILE,
    CURVE_FILE,
    PROBES_FILE,
    CONFIG_SNAPSHOT,
];

fn clear_run_outputs(dir: &Path) -> Result<(), CliError> {
    for name in RUN_FILES {
        let p = dir.join(name);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| io_error(&p, e))?;
        }
    }
    let ck = dir.join("checkpoints");
    if ck.exists() {
        fs::remove_dir_all(&ck).map_err(|e| io_error(&ck, e))?;
    }
    Ok(())
}

pub fn read_status(dir: &Path) -> Option<RunStatus> {
    let text = fs::read_to_string(dir.join(STATUS_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn summary_line(cfg: &RunConfig, m: &Metrics) -> String {
    format!(
        "{} on {} ({} datasets, seed {}): LST={} PER={} BWT={}",
        cfg.algorithm.as_str(),
        cfg.env.as_str(),
        cfg.labels.len(),
        cfg.seed,
        m.lst,
        m.per,
        m.bwt
    )
}

/// Runs a fully resolved configuration into `out`.
pub fn execute(cfg: &RunConfig, out: &Path, force: bool, resume: bool) -> Result<Metrics, CliError> {
    let seq = cfg.sequence()?;
    let settings = cfg.settings();
    let datasets = load_or_build(cfg)?;
    let mdp = make_default(cfg.env, cfg.seed);
    let snapshot = cfg.to_toml();

    let outcome = if resume {
        let status =
            read_status(out).ok_or_else(|| CliError::Usage(format!("{} holds no run to resume", out.display())))?;
        let stored = fs::read_to_string(out.join(CONFIG_SNAPSHOT)).unwrap_or_default();
        if stored != snapshot {
            return Err(CliError::Usage(
                "configuration differs from the one the run was started with".into(),
            ));
        }
        if status.completed == 0 {
            run_sequence(&mdp, &seq, &datasets, &settings, Some(out))?
        } else {
            resume_sequence(&mdp, &seq, &datasets, &settings, out, status.completed)?
        }
    } else {
        if read_status(out).is_some() {
            if !force {
                return Err(CliError::Usage(format!(
                    "{} already holds a run; pass --force to replace it or --resume to continue",
                    out.display()
                )));
            }
            clear_run_outputs(out)?;
        }
        fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
        let path = out.join(CONFIG_SNAPSHOT);
        fs::write(&path, &snapshot).map_err(|e| io_error(&path, e))?;
        run_sequence(&mdp, &seq, &datasets, &settings, Some(out))?
    };
    Ok(outcome.report.metrics)
}

pub fn cmd_run(args: &RunArgs) -> Result<Metrics, CliError> {
    let cfg = args.common.resolve()?;
    let out = cfg.out.clone().unwrap_or_else(|| default_out_dir(&cfg));
    let metrics = execute(&cfg, &out, args.force, args.resume)?;
    println!("{}", summary_line(&cfg, &metrics));
    Ok(metrics)
}
