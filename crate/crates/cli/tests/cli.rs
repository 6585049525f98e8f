use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench")).args(args).output().expect("bench binary runs")
}

fn run_into(dir: &Path, workers: &str) -> Output {
    let out = dir.to_str().unwrap();
    bench(&["run", "--scenario", "1", "--methods", "old-ngs,new", "--reps", "2", "--seed", "9", "--parallelism", workers, "--out", out])
}

/// raw.csv rows with the runtime column dropped.
fn raw_without_runtime(dir: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(dir.join("raw.csv")).unwrap();
    let runtime = rdr.headers().unwrap().iter().position(|h| h == "runtime_seconds").unwrap();
    rdr.records()
        .map(|r| r.unwrap().iter().enumerate().filter(|(i, _)| *i != runtime).map(|(_, v)| v.to_string()).collect())
        .collect()
}

#[test]
fn run_writes_all_artifacts_and_report_reproduces_them() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let o = run_into(&dir, "2");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["raw.csv", "summary.md", "summary.csv", "config.toml"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    assert_eq!(raw_without_runtime(&dir).len(), 4);

    let md = bench(&["report", "--in", dir.to_str().unwrap(), "--format", "markdown"]);
    assert!(md.status.success());
    assert_eq!(String::from_utf8(md.stdout).unwrap(), fs::read_to_string(dir.join("summary.md")).unwrap());
    let csv = bench(&["report", "--in", dir.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(String::from_utf8(csv.stdout).unwrap(), fs::read_to_string(dir.join("summary.csv")).unwrap());
}

#[test]
fn same_seed_same_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_into(&a, "2").status.success());
    assert!(run_into(&b, "1").status.success());
    assert_eq!(raw_without_runtime(&a), raw_without_runtime(&b));
}

#[test]
fn shipped_config_round_trips_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("cfg");
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
    let o = bench(&["run", "--config", config, "--scenario", "2", "--methods", "old-ngs", "--reps", "1", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(raw_without_runtime(&dir).len(), 1);
}

#[test]
fn bad_inputs_fail_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("never");
    let o = bench(&["run", "--methods", ",", "--reps", "1", "--out", dir.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(!dir.exists());

    let o = bench(&["run", "--methods", "nope", "--reps", "1", "--out", dir.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(!dir.exists());

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[scenario]\nphi_p = 1.5\n").unwrap();
    let o = bench(&["run", "--config", cfg.to_str().unwrap(), "--reps", "1", "--out", dir.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(!dir.exists());

    let o = bench(&["report", "--in", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
}
