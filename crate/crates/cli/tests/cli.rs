use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use driftguard_core::scenario::RunReport;

fn driftguard(dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_driftguard"));
    cmd.current_dir(dir).env_remove("DRIFTGUARD_CONFIG").env("RUST_BACKTRACE", "0");
    cmd
}

fn ok(out: Output) -> (String, String) {
    let stdout = String::from_utf8(out.stdout).unwrap();
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(out.status.success(), "stdout:\n{stdout}\nstderr:\n{stderr}");
    (stdout, stderr)
}

fn write_spec(path: &Path, seed: u64) {
    std::fs::write(path, format!(r#"{{"appearance": "(B),R,G", "cycles": 60, "seed": {seed}}}"#)).unwrap();
}

fn read_report(path: &Path) -> RunReport {
    RunReport::read_json(std::fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn run_writes_the_three_exports_per_approach() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(&dir.path().join("s.json"), 4);
    let (stdout, _) = ok(driftguard(dir.path())
        .args(["run", "--scenario", "s.json", "--approach", "predefined", "--out", "out"])
        .output()
        .unwrap());
    assert!(stdout.contains("pl-ec_B-RG_automated_s4"));
    let out = dir.path().join("out");
    for ext in ["records.csv", "metrics.csv", "json"] {
        assert!(out.join(format!("pl-ec_B-RG_automated_s4_predefined.{ext}")).is_file(), "{ext}");
    }
    let report = read_report(&out.join("pl-ec_B-RG_automated_s4_predefined.json"));
    assert_eq!(report.records.len(), 60);
    let records = std::fs::read_to_string(out.join("pl-ec_B-RG_automated_s4_predefined.records.csv")).unwrap();
    assert_eq!(records.lines().count(), 61);
    assert!(records.starts_with("cycle,approach,option_id,pl,ec,utility,rank,ideal_rank"));
}

#[test]
fn flags_override_the_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(&dir.path().join("s.json"), 4);
    ok(driftguard(dir.path())
        .args(["run", "--scenario", "s.json", "--approach", "baseline", "--seed", "9", "--cycles", "50", "--out", "o"])
        .output()
        .unwrap());
    let report = read_report(&dir.path().join("o/pl-ec_B-RG_automated_s9_baseline.json"));
    assert_eq!(report.spec.seed, 9);
    assert_eq!(report.records.len(), 50);
}

#[test]
fn config_is_found_by_flag_then_env_then_local_file() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(&dir.path().join("flag.json"), 2);
    write_spec(&dir.path().join("env.json"), 3);
    write_spec(&dir.path().join("driftguard.json"), 5);
    let run = |env: bool, flag: bool| {
        let mut cmd = driftguard(dir.path());
        cmd.args(["run", "--approach", "baseline", "--out", "o"]);
        if env {
            cmd.env("DRIFTGUARD_CONFIG", "env.json");
        }
        if flag {
            cmd.args(["--scenario", "flag.json"]);
        }
        ok(cmd.output().unwrap()).1
    };
    assert!(run(true, true).contains("scenario: flag.json"));
    assert!(run(true, false).contains("scenario: env.json"));
    assert!(run(false, false).contains("scenario: driftguard.json"));
    for seed in [2, 3, 5] {
        assert!(dir.path().join(format!("o/pl-ec_B-RG_automated_s{seed}_baseline.json")).is_file());
    }
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = driftguard(dir.path()).args(["run", "--approach", "bogus", "--out", "o"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown approach"));

    std::fs::write(dir.path().join("broken.json"), "{ nope").unwrap();
    let out = driftguard(dir.path()).args(["run", "--scenario", "broken.json", "--out", "o"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("parsing scenario"));

    write_spec(&dir.path().join("s.json"), 1);
    let out =
        driftguard(dir.path()).args(["run", "--scenario", "s.json", "--cycles", "0", "--out", "o"]).output().unwrap();
    assert!(!out.status.success());

    let out = driftguard(dir.path()).args(["report", "--compare", "."]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no run reports"));
}

#[test]
fn baseline_exports_the_archive_and_report_compares_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(&dir.path().join("s.json"), 4);
    ok(driftguard(dir.path()).args(["baseline", "--scenario", "s.json", "--out", "runs"]).output().unwrap());
    let runs = dir.path().join("runs");
    let archive = std::fs::read_to_string(runs.join("pl-ec_B-RG_automated_s4.archive.csv")).unwrap();
    let mut lines = archive.lines();
    assert_eq!(lines.next().unwrap(), "cycle,option_id,pl,ec,truth,cluster,truth_rank");
    assert_eq!(lines.count(), 60 * 1296);
    let ideal = std::fs::read_to_string(runs.join("pl-ec_B-RG_automated_s4.ideal.csv")).unwrap();
    assert_eq!(ideal.lines().count(), 61);
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(runs.join("pl-ec_B-RG_automated_s4.ideal_model.json")).unwrap())
            .unwrap();
    assert_eq!(model["ranking"].as_array().unwrap().len(), model["model"]["components"].as_array().unwrap().len());

    ok(driftguard(dir.path())
        .args(["run", "--scenario", "s.json", "--approach", "predefined", "--out", "runs"])
        .output()
        .unwrap());
    let (stdout, stderr) =
        ok(driftguard(dir.path()).args(["report", "--compare", "runs", "--csv", "table.csv"]).output().unwrap());
    assert!(stderr.contains("ideal_model.json (not a run report)"));
    let table: Vec<&str> = stdout.lines().filter(|l| l.starts_with("pl-ec_B-RG_automated_s4")).collect();
    assert_eq!(table.len(), 2);
    assert!(table[0].contains("baseline") && table[1].contains("predefined"));
    assert!(stdout.contains("per approach"));
    let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert!(csv.starts_with("label,approach,rsm,utility,pre_drift_rsm,drift_rsm,drift_utility,verifications,classes"));
    assert_eq!(csv.lines().count(), 3);
}

fn http_get(addr: &str, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    let status = resp.split_whitespace().nth(1).unwrap().parse().unwrap();
    (status, resp)
}

#[test]
fn serve_exposes_a_human_operated_run() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(&dir.path().join("s.json"), 4);
    let mut child = driftguard(dir.path())
        .args(["serve", "--scenario", "s.json", "--port", "0", "--pace-ms", "20"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let addr = loop {
        let mut line = String::new();
        assert!(stderr.read_line(&mut line).unwrap() > 0, "serve exited early");
        if let Some(url) = line.trim().strip_prefix("operator service listening on http://") {
            break url.to_string();
        }
    };
    let (status, body) = http_get(&addr, "/api/run/state");
    assert_eq!(status, 200, "{body}");
    assert!(body.contains("\"label\":\"pl-ec_B-RG_human_s4\""));
    assert!(body.contains("\"approach\":\"lsa_feedback\""));
    let (status, _) = http_get(&addr, "/api/feedback/pending");
    assert_eq!(status, 204);
    child.kill().unwrap();
    child.wait().unwrap();
}
