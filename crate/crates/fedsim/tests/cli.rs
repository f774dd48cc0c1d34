//! Process-level checks of the `fedsim` binary: exit codes, output
//! files, and manifest replay, all on tiny synthetic grids.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fedsim");

fn fresh_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fedsim-cli-{tag}-{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    dir
}

fn fedsim(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tiny_run_args<'a>(out_dir: &'a str, clients: &'a str) -> Vec<&'a str> {
    vec![
        "run",
        "--synthetic",
        "150,4,3,6",
        "--clients",
        clients,
        "--reps",
        "2",
        "--rounds",
        "2",
        "--epochs",
        "2",
        "--batch",
        "16",
        "--hidden",
        "6",
        "--out",
        out_dir,
    ]
}

fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn run_writes_tables_and_exits_zero() {
    let dir = fresh_dir("run");
    let dir_str = dir.to_str().unwrap();
    let out = fedsim(&tiny_run_args(dir_str, "2,3"));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    for file in ["raw.csv", "summary.csv", "trend.csv", "history.csv", "manifest.json"] {
        assert!(dir.join(file).is_file(), "{file} missing");
    }

    // Header plus 2 baseline reps plus 2 client counts x 2 reps.
    let raw = read_lines(&dir.join("raw.csv"));
    assert_eq!(raw.len(), 1 + 2 + 4);
    assert!(raw[0].starts_with("kind,t,rep,status"));
    assert!(raw.iter().skip(1).all(|l| l.contains(",ok,")));

    // One final model per run.
    let models: Vec<_> = std::fs::read_dir(dir.join("models"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(models.len(), 6);
    assert!(models.contains(&"baseline_rep0.json".to_string()));
    assert!(models.contains(&"federated_t3_rep1.json".to_string()));

    let text = stdout(&out);
    assert!(text.contains("baseline: runs=2"), "stdout: {text}");
    assert!(text.contains("federated t=2: runs=2"), "stdout: {text}");
    assert!(text.contains("wrote tables"), "stdout: {text}");

    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn rerun_replays_the_manifest_byte_for_byte() {
    let first = fresh_dir("rerun-a");
    let second = fresh_dir("rerun-b");
    let out = fedsim(&tiny_run_args(first.to_str().unwrap(), "2"));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let manifest = first.join("manifest.json");
    let out = fedsim(&[
        "rerun",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    for file in ["raw.csv", "summary.csv", "trend.csv", "history.csv"] {
        let a = std::fs::read(first.join(file)).unwrap();
        let b = std::fs::read(second.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between run and rerun");
    }

    std::fs::remove_dir_all(&first).unwrap();
    std::fs::remove_dir_all(&second).unwrap();
}

#[test]
fn oversized_client_count_is_a_partial_failure() {
    let dir = fresh_dir("partial");
    let dir_str = dir.to_str().unwrap();
    let out = fedsim(&[
        "run",
        "--synthetic",
        "60,3,2,6",
        "--clients",
        "2,500",
        "--reps",
        "1",
        "--rounds",
        "1",
        "--epochs",
        "1",
        "--hidden",
        "4",
        "--out",
        dir_str,
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("run(s) failed"));

    let raw = read_lines(&dir.join("raw.csv"));
    let failed: Vec<_> = raw.iter().filter(|l| l.contains(",failed,")).collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].starts_with("federated,500,0,"));

    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn unmatched_data_glob_aborts_without_output() {
    let dir = fresh_dir("abort");
    let out = fedsim(&[
        "run",
        "--data",
        "/nonexistent/fedsim-*.log",
        "--reps",
        "1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error:"), "stderr: {}", stderr(&out));
    assert!(!dir.exists(), "no output directory on abort");
}

#[test]
fn baseline_subcommand_trains_only_the_reference() {
    let dir = fresh_dir("baseline");
    let out = fedsim(&[
        "baseline",
        "--synthetic",
        "150,4,3,6",
        "--reps",
        "2",
        "--rounds",
        "1",
        "--epochs",
        "2",
        "--hidden",
        "6",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let raw = read_lines(&dir.join("raw.csv"));
    assert_eq!(raw.len(), 1 + 2);
    assert!(raw[1].starts_with("baseline,"));
    assert!(raw[2].starts_with("baseline,"));

    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn usage_errors_and_help_use_distinct_codes() {
    // Help and version are clean exits.
    assert_eq!(fedsim(&["--help"]).status.code(), Some(0));
    assert_eq!(fedsim(&["--version"]).status.code(), Some(0));
    assert!(stdout(&fedsim(&["--help"])).contains("fedsim"));

    // Usage errors exit 1, never the partial-failure code 2.
    let out = fedsim(&["run", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(1), "a data source is required");

    let out = fedsim(&[
        "run",
        "--synthetic",
        "100,4,3,6",
        "--data",
        "x/*.log",
        "--out",
        "/tmp/unused",
    ]);
    assert_eq!(out.status.code(), Some(1), "sources are mutually exclusive");

    let out = fedsim(&["run", "--synthetic", "100,4", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(1), "malformed synthetic shape");
    assert!(stderr(&out).contains("rows,features,classes,separation"));
}
