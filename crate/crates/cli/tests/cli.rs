use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dicorl::data::load_dataset;

fn dicorl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dicorl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "\
env = \"chain\"
epochs = 2
trajectories = 12
ensemble = 3
hidden = [8]
eval_episodes = 2

[hyper]
batch_size = 16
";

fn write_tiny_config(dir: &Path) {
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
}

#[test]
fn gen_writes_six_files_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let seq = "Random1,Random2,Random3,Medium1,Medium2,Medium3";
    let o = dicorl(
        &[
            "gen",
            "--sequence",
            seq,
            "--trajectories",
            "15",
            "--seed",
            "3",
            "--out",
            "data",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(d.join("data"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 6);
    for label in seq.split(',') {
        let ds = load_dataset(&d.join("data").join(format!("{label}.dset"))).unwrap();
        assert_eq!(ds.header.label, label);
        assert_eq!(ds.header.state_dim, 10);
        assert_eq!(ds.header.action_dim, 3);
    }
    let before = fs::read(d.join("data/Medium2.dset")).unwrap();

    let o = dicorl(
        &[
            "gen",
            "--sequence",
            seq,
            "--trajectories",
            "15",
            "--seed",
            "3",
            "--out",
            "data",
        ],
        d,
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--force"));

    let o = dicorl(
        &[
            "gen",
            "--sequence",
            seq,
            "--trajectories",
            "15",
            "--seed",
            "3",
            "--out",
            "data",
            "--force",
        ],
        d,
    );
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(d.join("data/Medium2.dset")).unwrap(), before);
}

#[test]
fn unknown_env_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dicorl(&["gen", "--env", "hopper", "--out", "data"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hopper"));
    let o = dicorl(&["frobnicate"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "epochz = 3\n").unwrap();
    let o = dicorl(&["run", "--config", "bad.toml", "--out", "r"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("epochz"));
}

#[test]
fn run_is_reproducible_and_prints_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_tiny_config(d);
    let args = [
        "run",
        "--config",
        "tiny.toml",
        "--algo",
        "ereiql",
        "--preset",
        "medium-random",
        "--seed",
        "5",
    ];
    let mut a = args.to_vec();
    a.extend(["--out", "r1"]);
    let o1 = dicorl(&a, d);
    assert_eq!(code(&o1), 0, "{}", stderr(&o1));
    let line = String::from_utf8_lossy(&o1.stdout).into_owned();
    assert_eq!(line.lines().count(), 1);
    assert!(line.contains("LST=") && line.contains("PER=") && line.contains("BWT="));

    let mut b = args.to_vec();
    b.extend(["--out", "r2"]);
    assert_eq!(code(&dicorl(&b, d)), 0);
    for f in ["metrics.json", "eval_matrix.csv", "eval_curve.csv", "probes.csv"] {
        assert_eq!(
            fs::read(d.join("r1").join(f)).unwrap(),
            fs::read(d.join("r2").join(f)).unwrap(),
            "{f}"
        );
    }
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r1/metrics.json")).unwrap()).unwrap();
    for k in ["per", "bwt", "lst"] {
        assert!(m[k].as_f64().unwrap().is_finite());
    }
    assert!(d.join("r1/config.toml").exists());
    assert!(d.join("r1/checkpoints/after_02/agent/manifest.json").exists());

    // A second run into the same directory needs --force.
    assert_eq!(code(&dicorl(&a, d)), 2);
    // Resuming a finished run changes nothing.
    let mut r = a.clone();
    r.push("--resume");
    let o = dicorl(&r, d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(d.join("r1/metrics.json")).unwrap(),
        fs::read(d.join("r2/metrics.json")).unwrap()
    );
}

#[test]
fn config_snapshot_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_tiny_config(d);
    let o = dicorl(
        &[
            "run",
            "--config",
            "tiny.toml",
            "--algo",
            "iql",
            "--preset",
            "single-medium",
            "--out",
            "a",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = dicorl(&["run", "--config", "a/config.toml", "--out", "b"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(d.join("a/eval_matrix.csv")).unwrap(),
        fs::read(d.join("b/eval_matrix.csv")).unwrap()
    );
    let snap = fs::read_to_string(d.join("a/config.toml")).unwrap();
    assert!(snap.contains("algorithm = \"iql\""));
    assert!(snap.contains("tau = 0.8"));
}

#[test]
fn missing_dataset_names_the_label() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_tiny_config(d);
    assert_eq!(
        code(&dicorl(
            &["gen", "--config", "tiny.toml", "--sequence", "Medium1", "--out", "data"],
            d
        )),
        0
    );
    let o = dicorl(
        &[
            "run",
            "--config",
            "tiny.toml",
            "--preset",
            "medium-random",
            "--data",
            "data",
            "--out",
            "r",
        ],
        d,
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Random1"), "{}", stderr(&o));
}

#[test]
fn run_uses_generated_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_tiny_config(d);
    assert_eq!(
        code(&dicorl(
            &[
                "gen",
                "--config",
                "tiny.toml",
                "--preset",
                "medium-random",
                "--out",
                "data"
            ],
            d
        )),
        0
    );
    let o = dicorl(
        &[
            "run",
            "--config",
            "tiny.toml",
            "--preset",
            "medium-random",
            "--data",
            "data",
            "--out",
            "from_files",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = dicorl(
        &[
            "run",
            "--config",
            "tiny.toml",
            "--preset",
            "medium-random",
            "--out",
            "in_memory",
        ],
        d,
    );
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(d.join("from_files/eval_matrix.csv")).unwrap(),
        fs::read(d.join("in_memory/eval_matrix.csv")).unwrap()
    );
}

#[test]
fn numeric_abort_exits_three_and_keeps_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_tiny_config(d);
    let o = dicorl(
        &[
            "run",
            "--config",
            "tiny.toml",
            "--algo",
            "iql",
            "--preset",
            "medium-random",
            "--learning-rate",
            "1e100",
            "--out",
            "r",
        ],
        d,
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("numeric"));
    let status: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("r/status.json")).unwrap()).unwrap();
    assert_eq!(status["state"], "aborted");
    let matrix = fs::read_to_string(d.join("r/eval_matrix.csv")).unwrap();
    assert!(matrix.starts_with("after,label,Medium1,Random1"));
}

#[test]
fn ablate_grid_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_tiny_config(d);
    let o = dicorl(&["ablate", "--config", "tiny.toml", "--out", "g"], d);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("empty"));

    let o = dicorl(
        &[
            "ablate",
            "--config",
            "tiny.toml",
            "--grid-buffer",
            "1,10,25,75",
            "--grid-ensemble",
            "1,5,30,100",
            "--grid-tau",
            "0.8,0.9,0.99",
            "--replicates",
            "5",
            "--out",
            "g",
        ],
        d,
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--yes"));

    let o = dicorl(
        &[
            "ablate",
            "--config",
            "tiny.toml",
            "--algo",
            "ereiql",
            "--preset",
            "medium-random",
            "--grid-buffer",
            "1,4",
            "--replicates",
            "1",
            "--out",
            "g",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(d.join("g/ablation_summary.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "buffer,ensemble,tau,replicate,seed,per,bwt,lst,status,dir");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("1,,,0,") && rows[1].contains(",complete,"));
    assert!(rows[2].starts_with("4,,,0,"));
    // Identical replicate seed across the axis.
    let seed = |r: &str| r.split(',').nth(4).unwrap().to_string();
    assert_eq!(seed(rows[1]), seed(rows[2]));
}

#[test]
fn ablate_with_worker_processes_matches_sequential() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_tiny_config(d);
    let common = [
        "ablate",
        "--config",
        "tiny.toml",
        "--algo",
        "eiql",
        "--preset",
        "single-medium",
        "--grid-tau",
        "0.8,0.99",
        "--replicates",
        "1",
    ];
    let mut seq = common.to_vec();
    seq.extend(["--out", "s"]);
    assert_eq!(code(&dicorl(&seq, d)), 0);
    let mut par = common.to_vec();
    par.extend(["--out", "p", "--workers", "2"]);
    let o = dicorl(&par, d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for point in ["tau0.8_rep0", "tau0.99_rep0"] {
        assert_eq!(
            fs::read(d.join("s").join(point).join("metrics.json")).unwrap(),
            fs::read(d.join("p").join(point).join("metrics.json")).unwrap()
        );
    }
}

#[test]
fn report_merges_curves_and_sorts_by_lst() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_tiny_config(d);
    for (algo, out) in [("iql", "a"), ("cql", "b")] {
        let o = dicorl(
            &[
                "run",
                "--config",
                "tiny.toml",
                "--algo",
                algo,
                "--preset",
                "medium-random",
                "--out",
                out,
            ],
            d,
        );
        assert_eq!(code(&o), 0);
    }
    let o = dicorl(
        &[
            "run",
            "--config",
            "tiny.toml",
            "--algo",
            "iql",
            "--preset",
            "medium-random",
            "--learning-rate",
            "1e100",
            "--out",
            "broken",
        ],
        d,
    );
    assert_eq!(code(&o), 3);

    let o = dicorl(&["report", "a", "--out", "rep1"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let curves = fs::read_to_string(d.join("rep1/report_curves.csv")).unwrap();
    let header = curves.lines().next().unwrap();
    assert!(header.contains("dataset_start_step") && header.contains("boundary"));
    let boundary_rows = curves
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(7) == Some("1"))
        .count();
    assert_eq!(boundary_rows, 1);

    let o = dicorl(&["report", "a", "b", "broken", "not_a_run", "--out", "rep2"], d);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("not_a_run"));
    let table = fs::read_to_string(d.join("rep2/report_table.txt")).unwrap();
    let lines: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(lines.len(), 3);
    let lst = |l: &str| {
        l.split_whitespace()
            .nth(2)
            .unwrap()
            .parse::<f64>()
            .unwrap_or(f64::NEG_INFINITY)
    };
    assert!(lst(lines[0]) >= lst(lines[1]));
    assert!(lines[2].starts_with("broken") && lines[2].ends_with("yes"));
    let curves = fs::read_to_string(d.join("rep2/report_curves.csv")).unwrap();
    assert!(curves
        .lines()
        .filter(|l| l.starts_with("broken,"))
        .all(|l| l.ends_with(",1")));
    assert!(curves
        .lines()
        .filter(|l| l.starts_with("a,"))
        .all(|l| l.ends_with(",0")));

    let o = dicorl(&["report", "nothing_here"], d);
    assert_eq!(code(&o), 2);
}
