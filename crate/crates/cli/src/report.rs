use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use dicorl::continual::{RunState, CURVE_FILE, METRICS_FILE, SETTINGS_FILE};

use crate::run::read_status;
use crate::{io_error, CliError};

pub const CURVES_FILE: &str = "report_curves.csv";
pub const TABLE_FILE: &str = "report_table.txt";

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directories to merge.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Directory for the merged curve CSV and the table.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: u64,
    pub dataset: usize,
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub algorithm: String,
    pub lst: Option<f64>,
    pub per: Option<f64>,
    pub bwt: Option<f64>,
    pub partial: bool,
    pub curve: Vec<CurveRow>,
}

fn parse_curve(text: &str) -> Option<Vec<CurveRow>> {
    let mut lines = text.lines();
    if lines.next()? != "step,dataset,label,return" {
        return None;
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return None;
            }
            Some(CurveRow {
                step: f[0].parse().ok()?,
                dataset: f[1].parse().ok()?,
                label: f[2].to_string(),
                value: f[3].parse().ok()?,
            })
        })
        .collect()
}

/// Reads one run directory; `None` when it is not a run directory.
pub fn load_run(dir: &Path) -> Option<RunSummary> {
    let status = read_status(dir)?;
    let curve = parse_curve(&fs::read_to_string(dir.join(CURVE_FILE)).ok()?)?;
    let metrics: Option<serde_json::Value> = fs::read_to_string(dir.join(METRICS_FILE))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let settings: Option<serde_json::Value> = fs::read_to_string(dir.join(SETTINGS_FILE))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let algorithm = settings
        .as_ref()
        .and_then(|s| s["settings"]["algorithm"].as_str().map(String::from))
        .unwrap_or_else(|| "?".into());
    let get = |k: &str| metrics.as_ref().and_then(|m| m[k].as_f64());
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Some(RunSummary {
        name,
        algorithm,
        lst: get("lst"),
        per: get("per"),
        bwt: get("bwt"),
        partial: status.state != RunState::Complete,
        curve,
    })
}

/// Curve rows of every run. `dataset_start_step` is the last step of the
/// previous dataset (0 for the first), and `boundary` marks the first row
/// after each dataset switch.
pub fn curves_csv(runs: &[RunSummary]) -> String {
    let mut s = String::from("run,algorithm,step,dataset,label,return,dataset_start_step,boundary,partial\n");
    for r in runs {
        let mut start = 0;
        let mut prev_dataset = None;
        let mut prev_step = 0;
        for row in &r.curve {
            let boundary = prev_dataset.is_some_and(|d| d != row.dataset);
            if prev_dataset != Some(row.dataset) {
                start = if prev_dataset.is_some() { prev_step } else { 0 };
            }
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.name,
                r.algorithm,
                row.step,
                row.dataset,
                row.label,
                row.value,
                start,
                boundary as u8,
                r.partial as u8
            )
            .unwrap();
            prev_dataset = Some(row.dataset);
            prev_step = row.step;
        }
    }
    s
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

/// Plain-text table sorted by LST, highest first; runs without metrics last.
pub fn table(runs: &[RunSummary]) -> String {
    let mut sorted: Vec<&RunSummary> = runs.iter().collect();
    sorted.sort_by(|a, b| {
        let ka = a.lst.unwrap_or(f64::NEG_INFINITY);
        let kb = b.lst.unwrap_or(f64::NEG_INFINITY);
        kb.total_cmp(&ka)
    });
    let width = sorted.iter().map(|r| r.name.len()).max().unwrap_or(3).max(3);
    let mut s = format!(
        "{:<width$}  {:<8}  {:>7}  {:>7}  {:>7}  partial\n",
        "run", "algo", "LST", "PER", "BWT"
    );
    for r in sorted {
        writeln!(
            s,
            "{:<width$}  {:<8}  {:>7}  {:>7}  {:>7}  {}",
            r.name,
            r.algorithm,
            cell(r.lst),
            cell(r.per),
            cell(r.bwt),
            if r.partial { "yes" } else { "no" }
        )
        .unwrap();
    }
    s
}

pub fn cmd_report(args: &ReportArgs) -> Result<Vec<RunSummary>, CliError> {
    let mut runs = Vec::new();
    for dir in &args.runs {
        match load_run(dir) {
            Some(r) => runs.push(r),
            None => eprintln!("warning: {} is not a run directory; skipped", dir.display()),
        }
    }
    if runs.is_empty() {
        return Err(CliError::Usage("no valid run directories given".into()));
    }
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let curves = args.out.join(CURVES_FILE);
    fs::write(&curves, curves_csv(&runs)).map_err(|e| io_error(&curves, e))?;
    let text = table(&runs);
    let path = args.out.join(TABLE_FILE);
    fs::write(&path, &text).map_err(|e| io_error(&path, e))?;
    print!("{text}");
    Ok(runs)
}
