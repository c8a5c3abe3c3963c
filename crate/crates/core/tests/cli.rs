mod common;

use std::process::{Command, Output};

use ccarena::harness::CSV_HEADER;

use common::fixture;

fn ccarena(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccarena"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn run_prints_one_row() {
    let out = ccarena(&["run", "--protocol", "occ", "--clients", "10", "--items", "50", "--txns", "100", "--seed", "3"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert!(lines[1].starts_with("occ,3,100,50,"));
    assert_eq!(lines.len(), 2);
}

#[test]
fn run_reads_config_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "protocol = s2pl\nn_txns = 40\nseed = 5\n").unwrap();
    let out = ccarena(&["run", "--config", cfg.to_str().unwrap(), "--seed", "6"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("s2pl,6,40,"));
}

#[test]
fn config_errors_exit_1() {
    assert_eq!(code(&ccarena(&["run", "--items", "0"])), 1);
    assert_eq!(code(&ccarena(&["run", "--protocol", "mvcc"])), 1);
    assert_eq!(code(&ccarena(&["run", "--config", "/nonexistent/file"])), 1);
    assert_eq!(code(&ccarena(&["bogus"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.matrix");
    std::fs::write(&bad, "items = 10\nflavour = mint\n").unwrap();
    let out = dir.path().join("out.csv");
    assert_eq!(
        code(&ccarena(&["matrix", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()])),
        1
    );
}

#[test]
fn matrix_writes_sorted_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let plot = dir.path().join(format!("{name}.dat"));
        let status = ccarena(&[
            "matrix",
            "--config",
            fixture("small.matrix").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--gnuplot",
            plot.to_str().unwrap(),
        ]);
        assert_eq!(code(&status), 0);
        assert!(std::fs::read_to_string(plot).unwrap().contains("# protocol=s2pl n_items=20"));
        std::fs::read_to_string(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let rows: Vec<&str> = a.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    let keys: Vec<(&str, &str)> = rows
        .iter()
        .map(|r| {
            let f: Vec<&str> = r.split(',').collect();
            (f[0], f[1])
        })
        .collect();
    assert_eq!(
        keys,
        [("opcot", "1"), ("opcot", "2"), ("occ", "1"), ("occ", "2"), ("s2pl", "1"), ("s2pl", "2")]
    );
}

#[test]
fn check_reports_oracle_verdicts() {
    let lost = fixture("lost_update.history");
    let out = ccarena(&["check", "--history", lost.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("cycle"));
    assert!(text.contains("exhaustive search: not serializable"));

    let co = fixture("co_violation.history");
    let path = co.to_str().unwrap();
    assert_eq!(code(&ccarena(&["check", "--history", path])), 0);
    assert_eq!(code(&ccarena(&["check", "--history", path, "--co"])), 2);
    assert_eq!(code(&ccarena(&["check", "--history", "/nonexistent"])), 1);
}

#[test]
fn clean_run_dumps_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccarena(&["run", "--protocol", "opcot", "--txns", "50", "--dump-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    // clean runs leave nothing behind
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn oracle_violation_exits_2_and_dumps_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("literal.conf");
    std::fs::write(
        &cfg,
        "timestamp_rule = literal\nn_items = 20\nn_txns = 200\nmean_interarrival_ms = 10\n",
    )
    .unwrap();
    let out = ccarena(&["run", "--config", cfg.to_str().unwrap(), "--seed", "1", "--dump-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(out.stdout.is_empty(), "no row for a failed run");
    let dumped = dir
        .path()
        .join("violation-opcot-items20-txns200-seed1.history");
    let check = ccarena(&["check", "--history", dumped.to_str().unwrap()]);
    assert_eq!(code(&check), 2);
}
