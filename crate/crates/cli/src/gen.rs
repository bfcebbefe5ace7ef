use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use dicorl::data::{dataset_file_name, generate_dataset, mean_trajectory_return, Dataset, DatasetHeader};
use dicorl::env::{make_default, Mdp};

use crate::config::RunConfig;
use crate::{io_error, CliError, CommonArgs};

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Overwrite existing dataset files.
    #[arg(long)]
    pub force: bool,
}

pub const DEFAULT_DATA_DIR: &str = "data";

/// Builds every dataset of the configured sequence in memory.
pub fn build_datasets(cfg: &RunConfig, mdp: &Mdp) -> Result<Vec<Dataset>, CliError> {
    cfg.sequence()?
        .datasets
        .iter()
        .map(|spec| {
            Ok(Dataset {
                header: DatasetHeader::for_spec(mdp, spec),
                transitions: generate_dataset(mdp, spec)?,
            })
        })
        .collect()
}

pub fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let dir: PathBuf = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
    let paths: Vec<PathBuf> = cfg.labels.iter().map(|l| dir.join(dataset_file_name(l))).collect();
    if !args.force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(CliError::Usage(format!(
                "{} already exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let mdp = make_default(cfg.env, cfg.seed);
    for (ds, path) in build_datasets(&cfg, &mdp)?.iter().zip(&paths) {
        dicorl::data::save_dataset(path, ds)?;
        println!(
            "{}: {} transitions, mean return {:.3}",
            display(path),
            ds.transitions.len(),
            mean_trajectory_return(&ds.transitions)
        );
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
