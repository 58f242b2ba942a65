use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn operlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_operlab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn unanimous_run_decides_everywhere() {
    let out = operlab(&["run", scenario("unanimous.json").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = stdout(&out);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("seed,n,t,gst,delta,pbit_max,pbit_mean,latency,views_max,terminated"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.ends_with(",1,true")));
}

#[test]
fn csv_matches_golden_file() {
    let out = operlab(&["run", scenario("split.json").to_str().unwrap(), "--seed", "7"]);
    assert!(out.status.success());
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/split-seed7.csv")).unwrap();
    assert_eq!(stdout(&out), golden);
}

#[test]
fn resilience_bound_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "bad.json", r#"{"n": 3, "t": 1, "proposals": {"kind": "unanimous", "value": 1}}"#);
    let out = operlab(&["run", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n ≥ 3t+1"), "{}", stderr(&out));
}

#[test]
fn unknown_field_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "bad.json", "{\n  \"n\": 4,\n  \"t\": 1,\n  \"gts\": 0,\n  \"proposals\": {\"kind\": \"unanimous\", \"value\": 1}\n}\n");
    let out = operlab(&["run", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("unknown field `gts`") && err.contains("line 4"), "{err}");
}

#[test]
fn violation_sets_exit_status_and_prints_excerpt() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(
        dir.path(),
        "short.json",
        r#"{"n": 4, "t": 1, "proposals": {"kind": "unanimous", "value": 1}, "max_time": 100}"#,
    );
    let out = operlab(&["run", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("termination-deadline violated") && err.contains("non-terminated"), "{err}");
    assert!(stdout(&out).contains(",false"));
}

#[test]
fn selected_checks_decide_the_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(
        dir.path(),
        "short.json",
        r#"{"n": 4, "t": 1, "proposals": {"kind": "unanimous", "value": 1}, "max_time": 100, "checks": ["agreement"]}"#,
    );
    let out = operlab(&["run", f.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn trace_flag_writes_one_file_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    let out = operlab(&["run", scenario("unanimous.json").to_str().unwrap(), "--trace", traces.to_str().unwrap()]);
    assert!(out.status.success());
    let mut names: Vec<String> = fs::read_dir(&traces).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 5);
    assert_eq!(names[0], "n4-seed0.tsv");
    let body = fs::read_to_string(traces.join("n4-seed0.tsv")).unwrap();
    let first = body.lines().next().unwrap();
    assert_eq!(first.split('\t').count(), 6, "{first}");
    assert!(body.lines().any(|l| l.contains("\tdecide\t")));
}

#[test]
fn seed_and_accounting_flags() {
    let path = scenario("unanimous.json");
    let payload = operlab(&["run", path.to_str().unwrap(), "--seed", "3"]);
    let full = operlab(&["run", path.to_str().unwrap(), "--seed", "3", "--accounting", "full"]);
    let bits = |o: &Output| -> u64 {
        let csv = stdout(o);
        let row = csv.lines().nth(1).unwrap().to_string();
        assert!(row.starts_with("3,"));
        row.split(',').nth(5).unwrap().parse().unwrap()
    };
    assert!(bits(&full) > bits(&payload));
}

#[test]
fn sweep_prints_a_table_per_n() {
    let out = operlab(&["sweep", "--n", "4,7", "--seeds", "2", scenario("sweep.json").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,t,runs,pbit_max,ratio");
    assert!(lines[1].starts_with("4,1,2,"));
    assert!(lines[2].starts_with("7,2,2,"));
    assert!(lines[3].starts_with("max ratio"));
}

#[test]
fn sweep_with_no_seeds_is_empty_and_succeeds() {
    let out = operlab(&["sweep", "--n", "4,7", "--seeds", "0", scenario("sweep.json").to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 2);
}

#[test]
fn sweep_rejects_small_sizes() {
    let out = operlab(&["sweep", "--n", "3", "--seeds", "1", scenario("sweep.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_passes_and_mutation_fails() {
    let path = scenario("oracle.json");
    let ok = operlab(&["oracle-sim", path.to_str().unwrap()]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).lines().all(|l| l.contains("PASS")));
    let bad = operlab(&["oracle-sim", "--mutate-parity", path.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("round 1"));
}
