use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spectralflow::flow::CSV_HEADER;

fn bin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectralflow")).args(args).current_dir(dir).output().expect("spawn")
}

fn write_config(dir: &Path, body: &str) {
    fs::write(dir.join("run.cfg"), body).unwrap();
}

#[test]
fn run_writes_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "d = 2\npotential = \"cos1d:10\"\n[flow]\nm = 10\nsteps = 30\neval_every = 10\neval_grid = 16\nprobe_count = 8\n");
    for out in ["a", "b"] {
        let o = bin(&["run", "--config", "run.cfg", "--out", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("sigma_mu") && stdout.contains("rayleigh"));
    }
    let csv = fs::read_to_string(dir.path().join("a/run.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv.lines().count(), 1 + 4);
    assert_eq!(csv, fs::read_to_string(dir.path().join("b/run.csv")).unwrap());
    assert!(dir.path().join("a/run.json").exists());
    assert!(dir.path().join("a/final.ckpt").exists());
}

#[test]
fn reference_file_enables_l2_and_env_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["reference", "--potential", "cos1d:10", "--grid", "32", "--out", "ref.txt"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("richardson"));
    write_config(dir.path(), "d = 2\npotential = \"cos1d:10\"\nm = 6\nsteps = 1000\neval_grid = 16\nprobe_count = 0\n");
    let o = Command::new(env!("CARGO_BIN_EXE_spectralflow"))
        .args(["run", "--config", "run.cfg", "--out", "r", "--reference-file", "ref.txt"])
        .env("SPECTRALFLOW_STEPS", "4")
        .env("SPECTRALFLOW_EVAL_EVERY", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("l2_error"));
    let csv = fs::read_to_string(dir.path().join("r/run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(!csv.lines().nth(1).unwrap().contains("NaN"));
}

#[test]
fn sweep_and_plot_commands() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "d = 2\npotential = \"zero\"\nm = 6\nsteps = 10\neval_every = 5\neval_grid = 16\nprobe_count = 0\n");
    let o = bin(&["sweep", "--config", "run.cfg", "--out", "s", "--runs", "3", "--seed", "7", "--parallel"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(dir.path().join("s/summary.csv")).unwrap();
    assert!(summary.starts_with("step,time_s_mean,time_s_var"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s/summary.json")).unwrap()).unwrap();
    assert_eq!(json["seeds"], serde_json::json!([7, 8, 9]));
    let o = bin(&["plot", "s/summary.csv", "s/run_000.csv", "--out", "p.svg", "--metric", "energy"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let svg = fs::read_to_string(dir.path().join("p.svg")).unwrap();
    assert!(svg.contains("<polygon"));
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "d = 2\npotential = \"zero\"\nm = 0\n");
    let o = bin(&["run", "--config", "run.cfg", "--out", "x"], dir.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("`m`"), "{err}");
    let o = bin(&["run", "--config", "missing.cfg"], dir.path());
    assert!(!o.status.success());
    let o = bin(&["reference", "--potential", "nonsense", "--out", "r.txt"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn check_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["check"], dir.path());
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{table}");
    assert_eq!(table.lines().filter(|l| l.starts_with("PASS")).count(), 7);
}
