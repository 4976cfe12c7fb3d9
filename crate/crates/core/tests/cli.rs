use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clusterfd::metrics::QosReport;
use clusterfd::report::{self, Summary};

fn fdsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdsim")).args(args).output().expect("spawn fdsim")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "crash", "--output", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    fdsim(&args)
}

#[test]
fn validate_accepts_files_and_bundled_names() {
    let ok = fdsim(&["validate", "partition_heal"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).starts_with("ok: partition_heal"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mini.toml");
    fs::write(&path, "horizon = 5.0\n[[clusters]]\nname = \"A\"\nprocesses = 1\ndetectors = 1\n").unwrap();
    assert_eq!(fdsim(&["validate", path.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn validate_reports_every_problem_with_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(
        &path,
        "horizon = -1.0\n[[clusters]]\nname = \"A\"\nprocesses = 1\ndetectors = 1\n\
         [[faults]]\nkind = \"crash\"\nprocess = \"A/p7\"\nat = 1.0\n",
    )
    .unwrap();
    let out = fdsim(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("horizon"), "{err}");
    assert!(err.contains("A/p7"), "{err}");
}

#[test]
fn missing_input_is_a_runtime_failure() {
    assert_eq!(fdsim(&["validate", "/nonexistent/scenario.toml"]).status.code(), Some(2));
    assert_eq!(fdsim(&["compare", "/nonexistent/a.json", "/nonexistent/b.json"]).status.code(), Some(2));
}

#[test]
fn run_writes_all_artifacts_and_honours_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), &["--seed", "5", "--no-gossip", "--cadence", "0.5"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for f in ["trace.jsonl", "report.json", "report.txt", "report.csv", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let report: QosReport = report::read_report(&dir.path().join("report.json")).unwrap();
    assert_eq!((report.seed, report.gossip, report.cadence), (5, false, 0.5));
    let summary: Summary = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.seed, 5);
    assert!(summary.completeness);
    assert!(stdout(&out).contains("strong completeness"));
}

#[test]
fn unwritable_output_fails_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = run_into(&blocker.join("sub"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_and_query_read_saved_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (on, off) = (dir.path().join("on"), dir.path().join("off"));
    assert!(run_into(&on, &[]).status.success());
    assert!(run_into(&off, &["--no-gossip"]).status.success());

    let json = dir.path().join("cmp.json");
    let cmp = fdsim(&[
        "compare",
        on.join("report.json").to_str().unwrap(),
        off.join("report.json").to_str().unwrap(),
        "--output",
        json.to_str().unwrap(),
    ]);
    assert_eq!(cmp.status.code(), Some(0), "{}", stderr(&cmp));
    assert!(stdout(&cmp).contains("T_D mean"));
    assert!(json.is_file());

    let trace = on.join("trace.jsonl");
    let q = fdsim(&["query", trace.to_str().unwrap(), "A/d0", "A/p1", "200"]);
    assert_eq!(q.status.code(), Some(0));
    assert!(stdout(&q).contains("suspected"));
    let q = fdsim(&["query", trace.to_str().unwrap(), "A/d0", "A/p0", "200"]);
    assert!(stdout(&q).contains("trusted"));
    let q = fdsim(&["query", trace.to_str().unwrap(), "A/d0", "A/p1", "9999"]);
    assert_eq!(q.status.code(), Some(2));
    let q = fdsim(&["query", trace.to_str().unwrap(), "Z/d0", "A/p1", "10"]);
    assert_eq!(q.status.code(), Some(2));
}

#[test]
fn compare_rejects_different_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_into(&a, &[]).status.success());
    assert!(fdsim(&["run", "no_fault", "--output", b.to_str().unwrap()]).status.success());
    let out = fdsim(&["compare", a.join("report.json").to_str().unwrap(), b.join("report.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("different scenario shapes"));
}
