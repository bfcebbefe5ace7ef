use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus};

use clap::Args;

use dicorl::continual::Metrics;
use dicorl::seed::{derive, offset};

use crate::config::{FileConfig, RunConfig};
use crate::run::{execute, read_status, CONFIG_SNAPSHOT};
use crate::{io_error, CliError, CommonArgs};

pub const MAX_GRID_WITHOUT_CONFIRM: usize = 200;
pub const SUMMARY_FILE: &str = "ablation_summary.csv";

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated buffer capacities.
    #[arg(long)]
    pub grid_buffer: Option<String>,
    /// Comma-separated ensemble sizes.
    #[arg(long)]
    pub grid_ensemble: Option<String>,
    /// Comma-separated expectile thresholds.
    #[arg(long)]
    pub grid_tau: Option<String>,
    /// Replicate seeds per grid point.
    #[arg(long, default_value_t = 3)]
    pub replicates: usize,
    /// Allow grids of more than 200 runs.
    #[arg(long)]
    pub yes: bool,
    /// Parallel worker processes.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Replace results of earlier grid runs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub buffer: Option<usize>,
    pub ensemble: Option<usize>,
    pub tau: Option<f64>,
    pub replicate: usize,
    pub seed: u64,
}

impl GridPoint {
    pub fn dir_name(&self) -> String {
        let mut s = String::new();
        if let Some(b) = self.buffer {
            write!(s, "buffer{b}_").unwrap();
        }
        if let Some(m) = self.ensemble {
            write!(s, "ens{m}_").unwrap();
        }
        if let Some(t) = self.tau {
            write!(s, "tau{t}_").unwrap();
        }
        write!(s, "rep{}", self.replicate).unwrap();
        s
    }
}

fn parse_axis<T: std::str::FromStr>(name: &str, raw: &Option<String>) -> Result<Option<Vec<T>>, CliError> {
    let Some(raw) = raw else { return Ok(None) };
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Usage(format!("--grid-{name}: cannot parse `{s}`")))
        })
        .collect::<Result<Vec<T>, _>>()
        .map(Some)
}

/// Seed of replicate `r`. Every grid point uses the same replicate seeds,
/// so comparisons across a grid axis are paired.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    derive(base, offset::REPLICATE, r as u64)
}

/// An axis that is not given contributes a single unset value; a given but
/// empty axis empties the grid. No axes at all is also an empty grid.
pub fn expand_grid(
    buffers: Option<Vec<usize>>,
    ensembles: Option<Vec<usize>>,
    taus: Option<Vec<f64>>,
    replicates: usize,
    base_seed: u64,
) -> Vec<GridPoint> {
    if buffers.is_none() && ensembles.is_none() && taus.is_none() {
        return Vec::new();
    }
    let b: Vec<Option<usize>> = buffers.map_or(vec![None], |v| v.into_iter().map(Some).collect());
    let m: Vec<Option<usize>> = ensembles.map_or(vec![None], |v| v.into_iter().map(Some).collect());
    let t: Vec<Option<f64>> = taus.map_or(vec![None], |v| v.into_iter().map(Some).collect());
    let mut points = Vec::new();
    for &buffer in &b {
        for &ensemble in &m {
            for &tau in &t {
                for replicate in 0..replicates {
                    points.push(GridPoint {
                        buffer,
                        ensemble,
                        tau,
                        replicate,
                        seed: replicate_seed(base_seed, replicate),
                    });
                }
            }
        }
    }
    points
}

fn point_config(base: &FileConfig, p: &GridPoint, dir: &Path) -> Result<RunConfig, CliError> {
    let over = FileConfig {
        buffer: p.buffer,
        ensemble: p.ensemble,
        tau: p.tau,
        seed: Some(p.seed),
        out: Some(dir.to_path_buf()),
        ..Default::default()
    };
    RunConfig::resolve(&base.clone().overlay(over))
}

fn read_metrics(dir: &Path) -> Option<Metrics> {
    let text = fs::read_to_string(dir.join(dicorl::continual::METRICS_FILE)).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    Some(Metrics {
        per: v["per"].as_f64()?,
        bwt: v["bwt"].as_f64()?,
        lst: v["lst"].as_f64()?,
        degenerate: v["degenerate"].as_bool().unwrap_or(false),
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn wait_child(child: &mut Child) -> Result<ExitStatus, CliError> {
    child
        .wait()
        .map_err(|e| CliError::Usage(format!("worker process failed: {e}")))
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<(), CliError> {
    let base = args.common.merged()?;
    // Validate the shared part of the configuration before anything runs.
    let base_cfg = RunConfig::resolve(&base)?;
    let points = expand_grid(
        parse_axis("buffer", &args.grid_buffer)?,
        parse_axis("ensemble", &args.grid_ensemble)?,
        parse_axis("tau", &args.grid_tau)?,
        args.replicates,
        base_cfg.seed,
    );
    if points.is_empty() {
        eprintln!("warning: the ablation grid is empty; nothing to run");
        return Ok(());
    }
    if points.len() > MAX_GRID_WITHOUT_CONFIRM && !args.yes {
        return Err(CliError::Usage(format!(
            "the grid has {} runs (more than {MAX_GRID_WITHOUT_CONFIRM}); pass --yes to proceed",
            points.len()
        )));
    }
    let root = base_cfg.out.clone().unwrap_or_else(|| PathBuf::from("ablation"));
    fs::create_dir_all(&root).map_err(|e| io_error(&root, e))?;
    let configs = points
        .iter()
        .map(|p| {
            let dir = root.join(p.dir_name());
            point_config(&base, p, &dir).map(|c| (dir, c))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut pending: Vec<usize> = Vec::new();
    for (i, (dir, _)) in configs.iter().enumerate() {
        let done = read_status(dir).is_some_and(|s| s.completed == s.total);
        if !done || args.force {
            pending.push(i);
        }
    }

    let mut failures = Vec::new();
    if args.workers <= 1 {
        for &i in &pending {
            let (dir, cfg) = &configs[i];
            match execute(cfg, dir, true, false) {
                Ok(m) => println!("{}: LST={} PER={} BWT={}", dir.display(), m.lst, m.per, m.bwt),
                Err(e) if matches!(e, CliError::Core(ref c) if c.is_numeric()) => {
                    eprintln!("{}: {e}", dir.display());
                    failures.push(i);
                }
                Err(e) => return Err(e),
            }
        }
    } else {
        let exe = std::env::current_exe()
            .map_err(|e| CliError::Usage(format!("cannot locate the dicorl executable: {e}")))?;
        for (dir, cfg) in &configs {
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            let path = dir.join(format!("{CONFIG_SNAPSHOT}.grid"));
            fs::write(&path, cfg.to_toml()).map_err(|e| io_error(&path, e))?;
        }
        let mut queue = pending.iter().copied();
        let mut running: Vec<(usize, Child)> = Vec::new();
        loop {
            while running.len() < args.workers {
                let Some(i) = queue.next() else { break };
                let dir = &configs[i].0;
                let child = Command::new(&exe)
                    .arg("run")
                    .arg("--config")
                    .arg(dir.join(format!("{CONFIG_SNAPSHOT}.grid")))
                    .arg("--force")
                    .spawn()
                    .map_err(|e| CliError::Usage(format!("cannot start worker: {e}")))?;
                running.push((i, child));
            }
            if running.is_empty() {
                break;
            }
            let (i, mut child) = running.remove(0);
            let status = wait_child(&mut child)?;
            match status.code() {
                Some(0) => {}
                Some(3) => failures.push(i),
                _ => {
                    for (_, mut c) in running {
                        let _ = c.kill();
                    }
                    return Err(CliError::Usage(format!(
                        "grid run {} failed ({status})",
                        configs[i].0.display()
                    )));
                }
            }
        }
    }

    let mut csv = String::from("buffer,ensemble,tau,replicate,seed,per,bwt,lst,status,dir\n");
    for (p, (dir, _)) in points.iter().zip(&configs) {
        let m = read_metrics(dir);
        let state = match read_status(dir) {
            Some(s) if s.completed == s.total => "complete",
            Some(_) => "partial",
            None => "missing",
        };
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            opt(p.buffer),
            opt(p.ensemble),
            opt(p.tau),
            p.replicate,
            p.seed,
            opt(m.map(|m| m.per)),
            opt(m.map(|m| m.bwt)),
            opt(m.map(|m| m.lst)),
            state,
            dir.display()
        )
        .unwrap();
    }
    let path = root.join(SUMMARY_FILE);
    fs::write(&path, csv).map_err(|e| io_error(&path, e))?;
    println!("{} runs summarised in {}", points.len(), path.display());
    if !failures.is_empty() {
        return Err(CliError::Core(dicorl::Error::Numeric {
            index: failures[0],
            what: format!("{} grid run(s) aborted", failures.len()),
        }));
    }
    Ok(())
}
