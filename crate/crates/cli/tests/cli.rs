//! Runs the `ppaf` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "scenario,seed,policy,proposers,sim_hours,lease_windows,failures,failure_rate,cas_conflicts,p50_recovery_s,max_recovery_s,lost_writes";

const FAULT_FREE: &str = r#"
scenario = "failover"
name = "quiet"
partition_sets = 2
duration_s = 600.0
seed = 3

[[regions]]
id = "west"
priority = 1

[[regions]]
id = "east"
priority = 2
"#;

const DUELING: &str = r#"
scenario = "dueling"
proposers = 5
duration_s = 600.0
seed = 1

[network]
random_p50_ms = [10.0, 250.0]

[client]
enabled = false
"#;

fn ppaf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppaf")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "quiet.toml", FAULT_FREE);
    let out = dir.path().join("out");
    let o = ppaf(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--runs", "2", "--trace", "on"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("quiet,3,"));
    assert!(lines[2].starts_with("quiet,4,"));
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(row[7], "0.0", "failure_rate of a fault-free run");
    assert_eq!(row[9], "", "no recoveries, no p50");
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 3);
    assert_eq!(sidecar["partition_sets"], 2);
    assert_eq!(sidecar["acceptors"], 7, "defaults are resolved in the sidecar");
    assert!(out.join("trace-quiet-static-3.jsonl").exists());
}

#[test]
fn reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "d.toml", DUELING);
    let read = |name: &str| {
        let out = dir.path().join(name);
        let o = ppaf(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--policy", "static", "--seed", "9"]);
        assert!(o.status.success());
        (
            fs::read(out.join("metrics.csv")).unwrap(),
            fs::read(out.join("config.json")).unwrap(),
        )
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn sidecar_reruns_the_same_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "d.toml", DUELING);
    let first = dir.path().join("first");
    assert!(ppaf(&["run", "--config", &cfg, "--out", first.to_str().unwrap(), "--proposers", "3"]).status.success());
    let sidecar = first.join("config.json");
    let second = dir.path().join("second");
    assert!(ppaf(&["run", "--config", sidecar.to_str().unwrap(), "--out", second.to_str().unwrap()]).status.success());
    assert_eq!(
        fs::read(first.join("metrics.csv")).unwrap(),
        fs::read(second.join("metrics.csv")).unwrap()
    );
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", &format!("acceptorz = 3\n{FAULT_FREE}"));
    let o = ppaf(&["run", "--config", &bad, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("acceptorz"));
    assert_eq!(ppaf(&["run"]).status.code(), Some(2));
    assert_eq!(ppaf(&["run", "--config", "x.toml", "--policy", "greedy"]).status.code(), Some(2));
    let quiet = write(dir.path(), "quiet.toml", FAULT_FREE);
    let o = ppaf(&["run", "--config", &quiet, "--proposers", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_summarizes_each_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "d.toml", DUELING);
    let out = dir.path().join("cmp");
    let o = ppaf(&["compare", "--config", &cfg, "--runs", "3", "--proposers", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "scenario,policy,proposers,runs,lease_windows,failures,mean_failure_rate,ci95_low,ci95_high,mean_cas_conflicts"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("dueling,static,5,3,"));
    assert!(lines[2].starts_with("dueling,adaptive,5,3,"));
    let cols: Vec<&str> = lines[1].split(',').collect();
    let (mean, lo, hi): (f64, f64, f64) = (cols[6].parse().unwrap(), cols[7].parse().unwrap(), cols[8].parse().unwrap());
    assert!(lo <= mean && mean <= hi);
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 7);
}

#[test]
fn compare_with_one_run_has_no_interval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "d.toml", DUELING);
    let out = dir.path().join("cmp");
    let o = ppaf(&["compare", "--config", &cfg, "--runs", "1", "--policy", "adaptive", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "proposer counts 3, 5, 7 and 9");
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!((cols[7], cols[8]), ("", ""), "{r}");
    }
}

#[test]
fn check_passes_and_echoes_seed() {
    let o = ppaf(&["check", "--seed", "42", "--runs", "500"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(stdout.lines().next().unwrap().contains("seed=42"));
    assert_eq!(stdout.matches("PASS").count(), 4, "{stdout}");
}

#[test]
fn check_reports_a_broken_acceptor() {
    let o = ppaf(&["check", "--runs", "500", "--inject-acceptor-bug"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout.contains("FAIL agreement"), "{stdout}");
    assert!(stdout.contains("phase1a"), "counterexample trace is printed: {stdout}");
}
