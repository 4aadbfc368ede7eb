use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atlas-zrp"))
        .args(args)
        .env_remove("ATLAS_ZRP_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn out_arg(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn defaults_print_a_config_that_round_trips() {
    let o = cli(&["defaults", "mollifier-gap"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("experiment = mollifier-gap"));
    assert!(text.contains("eps = 0.4, 0.2, 0.1"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gap.cfg");
    std::fs::write(&path, text.replace("replicas = 1000", "replicas = 8")).unwrap();
    let o = cli(&["run", "mollifier-gap", "--config", path.to_str().unwrap(), "--out", &out_arg(dir.path())]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("mollifier-gap/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["verdicts"][0]["criterion"], 10);
}

#[test]
fn run_writes_manifest_tables_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "run",
        "continuity",
        "--n",
        "4",
        "--replicas",
        "2",
        "--seed",
        "5",
        "--set",
        "t=0.05",
        "--set",
        "tol.min_events=10",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).starts_with("PASS C01"));
    let run = dir.path().join("continuity");
    for f in ["manifest.json", "replicas.csv", "summary.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 5);
    assert!(manifest["canonical_config"].as_str().unwrap().contains("tol.min_events = 10.0"));
    let rows = std::fs::read_to_string(run.join("replicas.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn failed_verdict_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "run",
        "continuity",
        "--n",
        "4",
        "--replicas",
        "2",
        "--set",
        "t=0.001",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("FAIL C01"));
}

#[test]
fn config_errors_name_the_line_and_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "# comment\nn = 8, 16\nreplicas = 4\nfoo = 1\n").unwrap();
    let o = cli(&["run", "bg-decay", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.cfg:4: unknown key `foo`"), "{}", stderr(&o));

    std::fs::write(&path, "experiment = hurst\n").unwrap();
    let o = cli(&["run", "bg-decay", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = cli(&["run", "bg-decay", "--set", "alpha=0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));
}

#[test]
fn unknown_experiment_is_rejected() {
    let o = cli(&["run", "no-such-thing"]);
    assert!(!o.status.success());
}
